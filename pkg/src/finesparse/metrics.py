"""Intra-block variance, realised sparsity and recall-vs-step curves."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import BlockMask

VARIANCE_HEADER = ("ordering", "B", "var_q", "var_k")
CURVE_HEADER = ("step", "mean_recall", "std_recall", "count")


@dataclass(frozen=True)
class VarianceReport:
    ordering: str
    var_q: float
    var_k: float
    block_size: int

    def csv_row(self):
        return (self.ordering, self.block_size, self.var_q, self.var_k)


def intra_block_variance(x, block_size: int) -> float:
    """Mean over blocks of the per-dimension mean squared deviation from the block mean.

    A short trailing block is measured over the rows it has.
    """
    if block_size < 1:
        raise ValueError("block_size must be positive")
    x = np.asarray(x, dtype=np.float64)
    n, d = x.shape
    per_block = []
    for start in range(0, n, block_size):
        blk = x[start : start + block_size]
        dev = blk - blk.mean(axis=0)
        per_block.append((dev * dev).sum() / (blk.shape[0] * d))
    return float(np.mean(per_block))


def realized_sparsity(mask: BlockMask) -> float:
    m = mask.block_count
    return 1.0 - int(mask.bits.sum()) / (m * m)


def recall_curve(rows) -> list[tuple[int, float, float, int]]:
    """Per-step (step, mean, std, count) of recall over layers, heads and seeds.

    ``rows`` are report rows (dicts with ``step`` and ``recall``); string
    values from a CSV are accepted.
    """
    by_step: dict[int, list[float]] = {}
    for row in rows:
        recall = row.get("recall")
        if recall is None or recall == "":
            raise ValueError(f"step {row.get('step')} has no recall; rerun with recall recording")
        by_step.setdefault(int(row["step"]), []).append(float(recall))
    out = []
    for step in sorted(by_step):
        vals = np.asarray(by_step[step])
        std = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
        out.append((step, float(vals.mean()), std, int(vals.size)))
    return out
