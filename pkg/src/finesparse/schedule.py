"""Adaptive sparsity budget, per-(layer, head) mask caching and the step pipeline."""

from __future__ import annotations

import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .attention import (
    BlockMask,
    DENSE_LIMIT,
    as_tokens,
    attention_recall,
    attention_scores,
    block_sparse_attention,
    full_attention,
)
from .curve import GridDims, Permutation, apply_permutation, invert_permutation, make_order
from .masks import ScoringParams, aggregate_scores, subblock_scores, topk_select
from .metrics import realized_sparsity

REPORT_HEADER = ("step", "layer", "head", "budget", "sparsity", "recall", "mask_updated")


@dataclass(frozen=True)
class SparsitySchedule:
    total_steps: int = 50
    warmup_fraction: float = 0.25
    phase_budgets: tuple[float, ...] = (0.3, 0.2, 0.1)
    phase_fraction: float = 0.25
    update_interval: int = 12
    dense_layers: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "phase_budgets", tuple(float(b) for b in self.phase_budgets))
        object.__setattr__(self, "dense_layers", tuple(int(x) for x in self.dense_layers))
        if self.total_steps < 1:
            raise ValueError("total_steps must be positive")
        if self.update_interval < 1:
            raise ValueError("update_interval must be positive")
        if not 0.0 <= self.warmup_fraction <= 1.0 or self.phase_fraction < 0.0:
            raise ValueError("fractions must be non-negative and warmup_fraction <= 1")
        if not self.phase_budgets and self.warmup_fraction < 1.0:
            raise ValueError("phase_budgets may only be empty for an all-dense schedule")
        if any(not 0.0 < b <= 1.0 for b in self.phase_budgets):
            raise ValueError("every phase budget must lie in (0, 1]")
        if self.warmup_fraction + len(self.phase_budgets) * self.phase_fraction > 1.0 + 1e-9:
            raise ValueError("warmup and phases cover more than the whole trajectory")

    def _boundary(self, fraction: float) -> int:
        # floor of the fractional step position; the epsilon absorbs float error
        return min(self.total_steps, math.floor(self.total_steps * fraction + 1e-9))

    @property
    def first_sparse_step(self) -> int:
        return self._boundary(self.warmup_fraction)

    def phase_starts(self) -> list[int]:
        return [
            self._boundary(self.warmup_fraction + i * self.phase_fraction)
            for i in range(len(self.phase_budgets))
        ]

    def budget_at(self, step: int) -> float | None:
        if not 0 <= step < self.total_steps:
            raise ValueError(f"step {step} outside [0, {self.total_steps})")
        if step < self.first_sparse_step:
            return None
        budget = None
        for start, b in zip(self.phase_starts(), self.phase_budgets):
            if step >= start:
                budget = b
        return budget

    def budgets(self) -> list[float | None]:
        return [self.budget_at(t) for t in range(self.total_steps)]


def budget_at(schedule: SparsitySchedule, step: int) -> float | None:
    """None while dense, otherwise the budget of the phase containing ``step``."""
    return schedule.budget_at(step)


@dataclass
class CacheEntry:
    mask: BlockMask
    last_update_step: int
    scores: np.ndarray | None = None
    budget: float | None = None


@dataclass
class MaskCache:
    """Block masks keyed by (layer, head); writes are serialised per cache."""

    first_sparse_step: int = 0
    _entries: dict = field(default_factory=dict)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def get(self, layer: int, head: int) -> CacheEntry | None:
        with self._lock:
            return self._entries.get((layer, head))

    def put(self, layer: int, head: int, mask: BlockMask, step: int,
            scores: np.ndarray | None = None, budget: float | None = None) -> None:
        with self._lock:
            self._entries[(layer, head)] = CacheEntry(mask, step, scores, budget)

    def __len__(self) -> int:
        with self._lock:
            return len(self._entries)


def should_update(cache: MaskCache, layer: int, head: int, step: int, interval: int) -> bool:
    if cache.get(layer, head) is None:
        return True
    return (step - cache.first_sparse_step) % interval == 0


@dataclass
class StepResult:
    output: np.ndarray
    budget: float | None
    mask: BlockMask | None
    mask_updated: bool
    reordered: tuple | None = None


def run_step(
    q,
    k,
    v,
    dims: GridDims,
    perm: Permutation,
    params: ScoringParams,
    schedule: SparsitySchedule,
    cache: MaskCache,
    layer: int,
    head: int,
    step: int,
) -> StepResult:
    """One attention call of the pipeline for a single (layer, head)."""
    q, k, v = as_tokens(q, "q"), as_tokens(k, "k"), as_tokens(v, "v")
    n = dims.token_count
    if not (q.shape[0] == k.shape[0] == v.shape[0] == n == len(perm)):
        raise ValueError(
            f"geometry mismatch: dims give {n} tokens, permutation {len(perm)}, "
            f"q/k/v rows {q.shape[0]}/{k.shape[0]}/{v.shape[0]}"
        )
    budget = schedule.budget_at(step)
    if budget is None or layer in schedule.dense_layers:
        out, _ = full_attention(q, k, v, with_scores=False)
        return StepResult(out, None, None, False)

    qr, kr, vr = (apply_permutation(perm, x) for x in (q, k, v))
    updated = should_update(cache, layer, head, step, schedule.update_interval)
    if updated:
        scores = aggregate_scores(subblock_scores(qr, kr, params), params)
        mask = topk_select(scores, budget, params.block_size)
        cache.put(layer, head, mask, step, scores, budget)
    else:
        entry = cache.get(layer, head)
        mask = entry.mask
        mask.check_geometry(n)
        if entry.budget != budget and entry.scores is not None:
            # phase change between rebuilds: re-select from the cached block scores
            mask = topk_select(entry.scores, budget, params.block_size)
            cache.put(layer, head, mask, entry.last_update_step, entry.scores, budget)
    out_r = block_sparse_attention(qr, kr, vr, mask)
    out = apply_permutation(invert_permutation(perm), out_r)
    return StepResult(out, budget, mask, updated, (qr, kr))


class FrozenWorkload:
    """The same q/k/v at every step, layer and head."""

    def __init__(self, q, k, v, steps: int, layers: int = 1, heads: int = 1):
        self.q, self.k, self.v = (as_tokens(x, n) for x, n in ((q, "q"), (k, "k"), (v, "v")))
        self.steps, self.layers, self.heads = steps, layers, heads

    def tokens(self, step: int, layer: int, head: int):
        if step >= self.steps:
            raise IndexError(f"workload exhausted at step {step}")
        return self.q, self.k, self.v


@dataclass
class TrajectoryReport:
    rows: list = field(default_factory=list)
    outputs: dict = field(default_factory=dict)
    mask_log: list = field(default_factory=list)

    def csv_rows(self):
        return [
            (r["step"], r["layer"], r["head"], r["budget"], r["sparsity"], r["recall"],
             r["mask_updated"])
            for r in self.rows
        ]


def run_trajectory(
    workload,
    dims: GridDims,
    ordering: str,
    params: ScoringParams,
    schedule: SparsitySchedule,
    *,
    record_recall: bool = True,
    keep_outputs: bool = True,
    threads: int = 1,
) -> TrajectoryReport:
    """Drive ``run_step`` over every step, layer and head of ``workload``.

    Steps run strictly in sequence; (layer, head) pairs within a step may run
    on ``threads`` workers. Results do not depend on the worker count.
    """
    if getattr(workload, "steps", schedule.total_steps) < schedule.total_steps:
        raise ValueError(
            f"workload supplies {workload.steps} steps, schedule needs {schedule.total_steps}"
        )
    perm = make_order(ordering, dims)
    cache = MaskCache(first_sparse_step=schedule.first_sparse_step)
    report = TrajectoryReport()
    pairs = [(l, h) for l in range(workload.layers) for h in range(workload.heads)]
    n = dims.token_count
    can_recall = record_recall and n <= DENSE_LIMIT

    def one(step, layer, head):
        q, k, v = workload.tokens(step, layer, head)
        res = run_step(q, k, v, dims, perm, params, schedule, cache, layer, head, step)
        if res.mask is None:
            sparsity, recall = 0.0, (1.0 if can_recall else None)
        else:
            sparsity = realized_sparsity(res.mask)
            recall = None
            if can_recall:
                qr, kr = res.reordered
                recall = attention_recall(attention_scores(qr, kr), res.mask)
        row = {
            "step": step, "layer": layer, "head": head, "budget": res.budget,
            "sparsity": sparsity, "recall": recall, "mask_updated": res.mask_updated,
        }
        return row, res

    workers = max(1, int(threads))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for step in range(schedule.total_steps):
            if workers == 1:
                results = [one(step, l, h) for l, h in pairs]
            else:
                results = list(pool.map(lambda lh: one(step, *lh), pairs))
            for row, res in results:
                report.rows.append(row)
                if res.mask_updated:
                    report.mask_log.append((step, row["layer"], row["head"], res.mask))
                if keep_outputs:
                    report.outputs[(step, row["layer"], row["head"])] = res.output
    return report
