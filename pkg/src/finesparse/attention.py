"""Dense attention oracle, block-sparse attention and attention recall.

Token matrices are stored as float32; every reduction runs in float64.
Blocks are contiguous runs of ``block_size`` rows; when ``block_size`` does
not divide ``N`` the last block is short, which is equivalent to zero padding
with padded keys forced to -inf and padded query rows trimmed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _backend

#: largest N for which an N x N score matrix may be materialised
DENSE_LIMIT = 4096

_ROW_CHUNK = 512


def as_tokens(x, name: str = "x") -> np.ndarray:
    """Validate a token matrix and return it as C-contiguous float32."""
    arr = np.ascontiguousarray(x, dtype=np.float32)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{name} must be a non-empty 2-D matrix, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite values")
    return arr


def num_blocks(n: int, block_size: int) -> int:
    if block_size < 1:
        raise ValueError("block_size must be positive")
    return -(-n // block_size)


@dataclass(frozen=True, eq=False)
class BlockMask:
    """M x M selection of (query block, key block) pairs."""

    bits: np.ndarray
    block_size: int

    def __post_init__(self):
        bits = np.ascontiguousarray(self.bits, dtype=bool)
        if bits.ndim != 2 or bits.shape[0] != bits.shape[1] or bits.shape[0] < 1:
            raise ValueError(f"mask must be square and non-empty, got {bits.shape}")
        if self.block_size < 1:
            raise ValueError("block_size must be positive")
        bits.flags.writeable = False
        object.__setattr__(self, "bits", bits)

    @classmethod
    def full(cls, n: int, block_size: int) -> "BlockMask":
        m = num_blocks(n, block_size)
        return cls(np.ones((m, m), dtype=bool), block_size)

    @property
    def block_count(self) -> int:
        return self.bits.shape[0]

    def check_geometry(self, n: int) -> None:
        if num_blocks(n, self.block_size) != self.block_count:
            raise ValueError(
                f"mask has {self.block_count} blocks of {self.block_size}, "
                f"sequence of {n} needs {num_blocks(n, self.block_size)}"
            )

    def token_mask(self, n: int) -> np.ndarray:
        """Expand to an N x N boolean matrix."""
        self.check_geometry(n)
        idx = np.arange(n) // self.block_size
        return self.bits[np.ix_(idx, idx)]

    def __eq__(self, other) -> bool:
        if not isinstance(other, BlockMask):
            return NotImplemented
        return self.block_size == other.block_size and np.array_equal(self.bits, other.bits)

    def __hash__(self):
        return hash((self.block_size, self.bits.tobytes()))


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Stable row softmax in float64; -inf entries get zero weight."""
    logits = np.asarray(logits, dtype=np.float64)
    peak = logits.max(axis=-1, keepdims=True)
    peak = np.where(np.isfinite(peak), peak, 0.0)
    w = np.exp(logits - peak)
    return w / w.sum(axis=-1, keepdims=True)


def _check_qkv(q, k, v):
    q, k, v = as_tokens(q, "q"), as_tokens(k, "k"), as_tokens(v, "v")
    if q.shape[1] != k.shape[1]:
        raise ValueError(f"q and k head dims differ: {q.shape[1]} vs {k.shape[1]}")
    if k.shape[0] != v.shape[0]:
        raise ValueError(f"k and v token counts differ: {k.shape[0]} vs {v.shape[0]}")
    return q, k, v


def score_rows(qd: np.ndarray, kd: np.ndarray, scale: float) -> np.ndarray:
    """float64 row-softmax of ``qd kd^T * scale``, computed in fixed row chunks.

    Every dense score matrix in the package goes through here, so two callers
    handed the same rows produce bit-identical scores.
    """
    out = np.empty((qd.shape[0], kd.shape[0]), dtype=np.float64)
    for start in range(0, qd.shape[0], _ROW_CHUNK):
        rows = slice(start, start + _ROW_CHUNK)
        out[rows] = softmax_rows((qd[rows] @ kd.T) * scale)
    return out


def attention_scores(q, k) -> np.ndarray:
    """Row-softmax of q k^T / sqrt(d), stored as float32."""
    q, k = as_tokens(q, "q"), as_tokens(k, "k")
    if q.shape[1] != k.shape[1]:
        raise ValueError(f"q and k head dims differ: {q.shape[1]} vs {k.shape[1]}")
    if max(q.shape[0], k.shape[0]) > DENSE_LIMIT:
        raise ValueError(f"dense scores limited to N <= {DENSE_LIMIT}")
    scale = 1.0 / math.sqrt(q.shape[1])
    return score_rows(q.astype(np.float64), k.astype(np.float64), scale).astype(np.float32)


def full_attention(q, k, v, *, with_scores: bool = True):
    """Dense attention. Returns ``(out, scores)``; ``scores`` is None when not requested.

    The output is computed in row chunks so it is identical whether or not
    the score matrix is kept.
    """
    q, k, v = _check_qkv(q, k, v)
    if with_scores and max(q.shape[0], k.shape[0]) > DENSE_LIMIT:
        raise ValueError(f"dense scores limited to N <= {DENSE_LIMIT}")
    scale = 1.0 / math.sqrt(q.shape[1])
    kd, vd = k.astype(np.float64), v.astype(np.float64)
    out = np.empty((q.shape[0], v.shape[1]), dtype=np.float32)
    scores = np.empty((q.shape[0], k.shape[0]), dtype=np.float32) if with_scores else None
    for start in range(0, q.shape[0], _ROW_CHUNK):
        rows = slice(start, start + _ROW_CHUNK)
        a = score_rows(q[rows].astype(np.float64), kd, scale)
        out[rows] = a @ vd
        if with_scores:
            scores[rows] = a
    return out, scores


def block_sparse_attention(q, k, v, mask: BlockMask) -> np.ndarray:
    """Attention restricted to the selected block pairs, renormalised per row."""
    q, k, v = _check_qkv(q, k, v)
    if q.shape[0] != k.shape[0]:
        raise ValueError("block-sparse attention needs equal query and key counts")
    mask.check_geometry(q.shape[0])
    if not mask.bits.any(axis=1).all():
        empty = np.flatnonzero(~mask.bits.any(axis=1))
        raise ValueError(f"query blocks {empty.tolist()} select no key blocks")
    bits = np.ascontiguousarray(mask.bits, dtype=np.uint8)
    return _backend.block_sparse_attention(
        q, k, v, bits, mask.block_size, 1.0 / math.sqrt(q.shape[1])
    )


def masked_scores(scores, mask: BlockMask) -> np.ndarray:
    """A * M with the block mask expanded to token resolution, no renormalisation."""
    scores = np.asarray(scores)
    if scores.ndim != 2 or scores.shape[0] != scores.shape[1]:
        raise ValueError("scores must be square")
    return np.where(mask.token_mask(scores.shape[0]), scores, np.zeros((), scores.dtype))


def attention_recall(scores, mask: BlockMask) -> float:
    """Fraction of the entrywise L1 attention mass kept by ``mask``."""
    scores = np.asarray(scores)
    kept = np.abs(masked_scores(scores, mask)).sum(dtype=np.float64)
    total = np.abs(scores).sum(dtype=np.float64)
    return float(kept / total)
