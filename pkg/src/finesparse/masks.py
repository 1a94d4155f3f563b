"""Hierarchical block scoring and top-K block mask construction.

Queries and keys are mean-pooled into sub-blocks of ``sub_block_size``
tokens, scored with a softmax over pooled keys, and the sub-block scores are
summed into one score per (query block, key block) pair. Each query block
then keeps its ``K = round(budget * M)`` best key blocks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .attention import BlockMask, as_tokens, num_blocks, score_rows


@dataclass(frozen=True)
class ScoringParams:
    block_size: int = 128
    sub_block_size: int = 16

    def __post_init__(self):
        if self.block_size < 1 or self.sub_block_size < 1:
            raise ValueError("block and sub-block sizes must be positive")
        if self.block_size % self.sub_block_size:
            raise ValueError(
                f"sub_block_size {self.sub_block_size} must divide block_size {self.block_size}"
            )

    @property
    def subs_per_block(self) -> int:
        return self.block_size // self.sub_block_size


def mean_pool(x, pool: int) -> np.ndarray:
    """Average consecutive groups of ``pool`` rows (float64).

    A trailing partial group is averaged over the rows it actually has.
    """
    if pool < 1:
        raise ValueError("pool must be positive")
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    groups = -(-n // pool)
    padded = np.zeros((groups * pool, x.shape[1]), dtype=np.float64)
    padded[:n] = x
    sums = padded.reshape(groups, pool, -1).sum(axis=1)
    counts = np.full(groups, pool, dtype=np.float64)
    counts[-1] = n - (groups - 1) * pool
    return sums / counts[:, None]


def subblock_scores(q, k, params: ScoringParams) -> np.ndarray:
    """Pooled attention matrix over sub-blocks, padded to ``M * B/B_s`` per side.

    Padded pooled keys carry zero probability; padded pooled query rows are
    all zero. Stored as float32 like any attention matrix.
    """
    q, k = as_tokens(q, "q"), as_tokens(k, "k")
    if q.shape[1] != k.shape[1]:
        raise ValueError(f"q and k head dims differ: {q.shape[1]} vs {k.shape[1]}")
    if q.shape[0] != k.shape[0]:
        raise ValueError("q and k must have the same token count")
    m = num_blocks(q.shape[0], params.block_size)
    width = m * params.subs_per_block
    qp = mean_pool(q, params.sub_block_size)
    kp = mean_pool(k, params.sub_block_size)
    sub = np.zeros((width, width), dtype=np.float32)
    scale = 1.0 / math.sqrt(q.shape[1])
    sub[: qp.shape[0], : kp.shape[0]] = score_rows(qp, kp, scale)
    return sub


def block_sums(matrix, group: int) -> np.ndarray:
    """Sum ``group x group`` tiles of a square matrix (float64)."""
    matrix = np.asarray(matrix)
    n = matrix.shape[0]
    if matrix.ndim != 2 or matrix.shape[1] != n:
        raise ValueError("expected a square matrix")
    m = -(-n // group)
    padded = np.zeros((m * group, m * group), dtype=np.float64)
    padded[:n, :n] = matrix
    return padded.reshape(m, group, m, group).sum(axis=(1, 3))


def aggregate_scores(sub, params: ScoringParams) -> np.ndarray:
    """Block score S[u, v] = sum of sub-block scores inside block pair (u, v)."""
    sub = np.asarray(sub)
    r = params.subs_per_block
    if sub.ndim != 2 or sub.shape[0] != sub.shape[1] or sub.shape[0] % r:
        raise ValueError(f"sub-block matrix {sub.shape} does not split into {r} sub-rows per block")
    return block_sums(sub, r)


def budget_to_k(budget: float, m: int) -> int:
    """K = min(M, max(1, round(budget * M))), halves rounded up."""
    if not 0.0 < budget <= 1.0:
        raise ValueError(f"budget must lie in (0, 1], got {budget}")
    # the epsilon absorbs float error in products such as 0.3 * 10
    return min(m, max(1, math.floor(budget * m + 0.5 + 1e-9)))


def topk_rows(scores: np.ndarray, k: int) -> np.ndarray:
    """Boolean selection of the ``k`` largest entries of each row (last axis).

    Ties go to the lower column index. Works on stacked matrices too.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if not 1 <= k <= scores.shape[-1]:
        raise ValueError(f"k={k} outside [1, {scores.shape[-1]}]")
    order = np.argsort(-scores, axis=-1, kind="stable")[..., :k]
    sel = np.zeros(scores.shape, dtype=bool)
    np.put_along_axis(sel, order, True, axis=-1)
    return sel


def topk_select(scores, budget: float, block_size: int) -> BlockMask:
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[0] != scores.shape[1]:
        raise ValueError("block scores must be square")
    k = budget_to_k(budget, scores.shape[0])
    return BlockMask(topk_rows(scores, k), block_size)


def build_mask(q, k, params: ScoringParams, budget: float) -> BlockMask:
    sub = subblock_scores(q, k, params)
    return topk_select(aggregate_scores(sub, params), budget, params.block_size)


def mean_pool_mask(q, k, block_size: int, budget: float) -> BlockMask:
    """Baseline: one pooled centroid per block, no sub-blocks."""
    return build_mask(q, k, ScoringParams(block_size, block_size), budget)


def scores_csv_rows(scores):
    """Rows for the ``u,v,score`` export."""
    scores = np.asarray(scores, dtype=np.float64)
    for u in range(scores.shape[0]):
        for v in range(scores.shape[1]):
            yield (u, v, float(scores[u, v]))
