"""Experiment drivers behind the CLI commands.

Each driver takes a :class:`RunConfig`, returns plain result objects plus a
list of :class:`Check` outcomes, and performs no I/O. Work is spread over
seeds with a thread pool; results are gathered in seed order so they do not
depend on the worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .attention import DENSE_LIMIT, BlockMask, attention_recall, attention_scores, num_blocks
from .config import RunConfig
from .curve import ORDERINGS, apply_permutation, make_order
from .masks import ScoringParams, budget_to_k, build_mask
from .metrics import VarianceReport, intra_block_variance, recall_curve
from .schedule import SparsitySchedule, TrajectoryReport, run_trajectory
from .synthetic import TrajectoryWorkload, gen_mixed_semantic, gen_video_field
from .theory import (
    BoundInputs,
    calibrate_c,
    monotone_within,
    oracle_topk,
    pairwise_misorder_bound,
    pairwise_misorder_prob,
    pooled_noise_variance_check,
    recall_corollary_check,
    score_expectation_check,
    selection_match_prob,
    theorem_bound,
)

SUBBLOCK_HEADER = ("sub_block", "label", "mean_recall", "std_recall", "seeds", "oracle_match")
ORDERING_RECALL_HEADER = ("ordering", "B", "budget", "mean_recall", "std_recall", "seeds")
PER_SEED_HEADER = ("seed", "ordering", "B", "var_q", "var_k", "recall")


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str = ""


def seed_list(cfg: RunConfig) -> list[int]:
    """Seeds used by multi-seed experiments: consecutive from the base seed."""
    if cfg.seeds < 1:
        raise ValueError("seeds must be positive")
    return [(cfg.seed + i) % 2**64 for i in range(cfg.seeds)]


def _map(cfg: RunConfig, fn, items):
    workers = cfg.worker_count
    if workers == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _mean_std(values) -> tuple[float, float]:
    a = np.asarray(values, dtype=np.float64)
    return float(a.mean()), float(a.std(ddof=1)) if a.size > 1 else 0.0


# ---------------------------------------------------------------------------
# trajectory run
# ---------------------------------------------------------------------------

def expected_updates(schedule: SparsitySchedule, layers: int, heads: int) -> set:
    """(step, layer, head) triples at which the update rule rebuilds a mask."""
    first = schedule.first_sparse_step
    out = set()
    for t in range(schedule.total_steps):
        if schedule.budget_at(t) is None or (t - first) % schedule.update_interval:
            continue
        for l in range(layers):
            if l in schedule.dense_layers:
                continue
            out.update((t, l, h) for h in range(heads))
    return out


def check_trajectory(report: TrajectoryReport, schedule: SparsitySchedule, layers: int,
                     heads: int, block_count: int) -> list[Check]:
    checks = []
    got = {(r["step"], r["layer"], r["head"]) for r in report.rows if r["mask_updated"]}
    want = expected_updates(schedule, layers, heads)
    checks.append(Check("mask_update_rule", got == want,
                        f"updated at {sorted(got ^ want)[:5]} unexpectedly" if got != want else ""))

    dense = [r for r in report.rows if r["budget"] is None]
    bad = [r["step"] for r in dense if r["sparsity"] != 0.0 or r["recall"] not in (None, 1.0)]
    checks.append(Check("dense_steps_exact", not bad, f"steps {bad[:5]}" if bad else ""))

    recalls = [r["recall"] for r in report.rows if r["recall"] is not None]
    checks.append(Check("recall_in_unit_interval",
                        all(-1e-12 <= x <= 1 + 1e-12 for x in recalls)))

    sparse = [r for r in report.rows if r["budget"] is not None]
    if sparse and all(abs(r["budget"] * block_count - round(r["budget"] * block_count)) < 1e-9
                      for r in sparse):
        realized = float(np.mean([r["sparsity"] for r in sparse]))
        target = 1.0 - float(np.mean([r["budget"] for r in sparse]))
        checks.append(Check("mean_sparse_sparsity", abs(realized - target) < 1e-9,
                            f"realized {realized!r}, expected {target!r}"))
    return checks


# ---------------------------------------------------------------------------
# ordering ablation
# ---------------------------------------------------------------------------

@dataclass
class OrderingResult:
    variance: list  # VarianceReport per ordering, averaged over seeds
    recall: list  # (ordering, B, budget, mean, std, seeds)
    per_seed: list  # (seed, ordering, B, var_q, var_k, recall)
    checks: list = field(default_factory=list)

    def mean_recall(self, ordering: str) -> float | None:
        for row in self.recall:
            if row[0] == ordering:
                return row[3]
        return None


def ablate_ordering(cfg: RunConfig) -> OrderingResult:
    dims, b = cfg.grid(), cfg.block_size
    n = dims.token_count
    params = cfg.scoring()
    perms = {name: make_order(name, dims) for name in ORDERINGS}
    with_recall = n <= DENSE_LIMIT

    def one(seed):
        q, k, _ = gen_video_field(cfg.field_params(seed))
        rows = []
        for name, perm in perms.items():
            qr, kr = apply_permutation(perm, q), apply_permutation(perm, k)
            recall = None
            if with_recall:
                mask = build_mask(qr, kr, params, cfg.budget)
                recall = attention_recall(attention_scores(qr, kr), mask)
            rows.append((seed, name, b, intra_block_variance(qr, b),
                         intra_block_variance(kr, b), recall))
        return rows

    per_seed = [row for rows in _map(cfg, one, seed_list(cfg)) for row in rows]
    variance, recall = [], []
    for name in ORDERINGS:
        mine = [r for r in per_seed if r[1] == name]
        variance.append(VarianceReport(
            name, float(np.mean([r[3] for r in mine])), float(np.mean([r[4] for r in mine])), b))
        if with_recall:
            m, s = _mean_std([r[5] for r in mine])
            recall.append((name, b, cfg.budget, m, s, len(mine)))
    result = OrderingResult(variance, recall, per_seed)

    if cfg.smoothness >= 4:
        var = {v.ordering: v for v in variance}
        h, r = var["hilbert3d"], var["raster"]
        result.checks.append(Check("hilbert3d_var_q_below_raster", h.var_q < r.var_q,
                                   f"{h.var_q!r} vs {r.var_q!r}"))
        result.checks.append(Check("hilbert3d_var_k_below_raster", h.var_k < r.var_k,
                                   f"{h.var_k!r} vs {r.var_k!r}"))
        if with_recall and cfg.seeds >= 20:
            hr, rr = result.mean_recall("hilbert3d"), result.mean_recall("raster")
            result.checks.append(Check("hilbert3d_recall_at_least_raster", hr >= rr,
                                       f"{hr!r} vs {rr!r}"))
    return result


# ---------------------------------------------------------------------------
# sub-block ablation
# ---------------------------------------------------------------------------

@dataclass
class SubblockResult:
    rows: list  # SUBBLOCK_HEADER tuples
    checks: list = field(default_factory=list)

    def means(self) -> list[float]:
        return [r[2] for r in self.rows]


def subblock_label(sub_block: int, block_size: int) -> str:
    return "w/o sub-block" if sub_block == block_size else str(sub_block)


def ablate_subblock(cfg: RunConfig) -> SubblockResult:
    b = cfg.block_size
    sizes = [int(x) for x in cfg.sub_block_sizes]
    all_params = [ScoringParams(b, s) for s in sizes]  # validates divisibility
    if cfg.tokens > DENSE_LIMIT:
        raise ValueError(f"recall needs tokens <= {DENSE_LIMIT}")

    def one(seed):
        q, k, _ = gen_mixed_semantic(cfg.mixed_params(seed))
        scores = attention_scores(q, k)
        m = num_blocks(scores.shape[0], b)
        oracle_bits = oracle_topk(scores, b, budget_to_k(cfg.budget, m))
        oracle_recall = attention_recall(scores, BlockMask(oracle_bits, b))
        recalls, match = [], True
        for p in all_params:
            mask = build_mask(q, k, p, cfg.budget)
            recalls.append(attention_recall(scores, mask))
            if p.sub_block_size == 1:
                match = bool(np.array_equal(mask.bits, oracle_bits)) and recalls[-1] == oracle_recall
        return recalls, match

    outs = _map(cfg, one, seed_list(cfg))
    rows = []
    for i, s in enumerate(sizes):
        m, sd = _mean_std([o[0][i] for o in outs])
        oracle = all(o[1] for o in outs) if s == 1 else None
        rows.append((s, subblock_label(s, b), m, sd, len(outs), oracle))
    result = SubblockResult(rows)

    if 1 in sizes:
        result.checks.append(Check("unit_sub_block_matches_oracle",
                                   all(o[1] for o in outs)))
    order = sorted(range(len(sizes)), key=lambda i: sizes[i])
    means = [rows[i][2] for i in order]
    if cfg.seeds >= 20:
        ok = all(later <= earlier for earlier, later in zip(means, means[1:]))
        result.checks.append(Check("recall_non_increasing_in_sub_block", ok,
                                   " ".join(f"{sizes[i]}:{rows[i][2]:.6f}" for i in order)))
    return result


# ---------------------------------------------------------------------------
# recall-vs-step curve
# ---------------------------------------------------------------------------

@dataclass
class CurveResult:
    curve: list  # (step, mean, std, count)
    rows: list  # (seed, step, layer, head, recall)
    checks: list = field(default_factory=list)


def curve_schedule(cfg: RunConfig) -> SparsitySchedule:
    """Fixed budget at every step, no warmup."""
    return SparsitySchedule(cfg.curve_steps, 0.0, (cfg.budget,), 1.0, cfg.curve_update_interval)


def run_recall_curve(cfg: RunConfig) -> CurveResult:
    dims = cfg.grid()
    if dims.token_count > DENSE_LIMIT:
        raise ValueError(f"recall curve needs at most {DENSE_LIMIT} tokens")
    sched = curve_schedule(cfg)
    params = cfg.scoring()

    def one(seed):
        w = TrajectoryWorkload(cfg.field_params(seed), cfg.curve_steps, cfg.noise_start,
                               cfg.noise_end, cfg.layers, cfg.heads)
        rep = run_trajectory(w, dims, cfg.ordering, params, sched, keep_outputs=False)
        return [(seed, r["step"], r["layer"], r["head"], r["recall"]) for r in rep.rows]

    rows = [r for rs in _map(cfg, one, seed_list(cfg)) for r in rs]
    curve = recall_curve({"step": r[1], "recall": r[4]} for r in rows)
    result = CurveResult(curve, rows)

    if cfg.budget >= 1.0:
        result.checks.append(Check("full_budget_recall_one",
                                   all(abs(r[4] - 1.0) < 1e-9 for r in rows)))
    if cfg.noise_start == cfg.noise_end == 0:
        means = [c[1] for c in curve]
        result.checks.append(Check("noiseless_curve_flat", max(means) - min(means) < 1e-12))
    elif cfg.noise_start > cfg.noise_end and cfg.seeds >= 10 and len(curve) > 1:
        first, last = curve[0], curve[-1]
        se = math.hypot(first[2] / math.sqrt(first[3]), last[2] / math.sqrt(last[3]))
        result.checks.append(Check(
            "final_recall_exceeds_first", last[1] - first[1] >= 2 * se,
            f"first {first[1]:.6f}, last {last[1]:.6f}, combined se {se:.6f}"))
    return result


# ---------------------------------------------------------------------------
# theory validation
# ---------------------------------------------------------------------------

@dataclass
class TheoryResult:
    rows: list  # VALIDATION_HEADER tuples
    c: float
    checks: list = field(default_factory=list)


def grid_params(cfg: RunConfig, gap: float, delta: float):
    """Block model whose pooled noise has per-coordinate std ``delta``, split evenly."""
    b = cfg.model_block_size
    return cfg.block_model_params(
        tau=delta / math.sqrt(2.0), sigma=delta * math.sqrt(b / 2.0),
        gap_target=gap, relevant=cfg.relevant,
    )


def _fmt(**kw) -> str:
    return " ".join(f"{k}={v}" for k, v in kw.items())


def validate_theory(cfg: RunConfig) -> TheoryResult:
    if cfg.trials < 100 or cfg.expectation_trials < 100 or cfg.variance_trials < 100:
        raise ValueError("theory checks need at least 100 trials")
    rows, checks = [], []

    def add(experiment, param_set, estimate, stderr, bound, ok):
        rows.append((experiment, param_set, estimate, stderr, bound, bool(ok)))
        if not ok:
            checks.append(Check(f"{experiment}[{param_set}]", False))

    # pooled centroid noise and score expectation
    for i, ls in enumerate(cfg.lemma_sets):
        p = cfg.block_model_params(**ls, gap_target=None, relevant=1)
        label = _fmt(set=i, **ls)
        var = pooled_noise_variance_check(p, cfg.variance_trials)
        se = var.expected * math.sqrt(2.0 / (cfg.variance_trials * p.blocks * p.head_dim - 1))
        add("pooled_variance", label, var.empirical, se, var.expected, var.relative_error <= 0.10)
        score = score_expectation_check(p, cfg.expectation_trials)
        worst = max(score, key=lambda s: abs(s.z))
        add("score_expectation", label, abs(worst.z), None, 4.0, abs(worst.z) <= 4.0)

    # selection and pairwise grid
    k = cfg.relevant
    match, pair = {}, {}
    for g in cfg.gaps:
        for dl in cfg.deltas:
            p = grid_params(cfg, g, dl)
            match[g, dl] = selection_match_prob(p, k, cfg.trials)
            pair[g, dl] = pairwise_misorder_prob(p, cfg.trials)
    c = cfg.c if cfg.c is not None else calibrate_c(list(pair.values()))

    for g in cfg.gaps:
        for dl in cfg.deltas:
            p = grid_params(cfg, g, dl)
            est, pw = match[g, dl], pair[g, dl]
            label = _fmt(gap=g, delta=dl)
            bound = theorem_bound(BoundInputs(g, p.norm_bound, p.tau, p.sigma, p.block_size,
                                              p.head_dim, k, p.blocks, c))
            add("selection_match", label, est.per_block, est.per_block_se, bound.value,
                bound.vacuous or est.per_block >= bound.value)
            pb = pairwise_misorder_bound(pw.gap, pw.q_norm_sq, pw.keydiff_norm_sq, pw.delta_sq,
                                         p.head_dim, c)
            add("pairwise_misorder", label, pw.probability, pw.stderr, pb, pw.probability <= pb)

    for dl in cfg.deltas:
        vals = [match[g, dl].per_block for g in cfg.gaps]
        ses = [match[g, dl].per_block_se for g in cfg.gaps]
        add("monotone_in_gap", _fmt(delta=dl), None, None, None,
            monotone_within(vals, ses, increasing=True))
    for g in cfg.gaps:
        vals = [match[g, dl].per_block for dl in cfg.deltas]
        ses = [match[g, dl].per_block_se for dl in cfg.deltas]
        add("monotone_in_delta", _fmt(gap=g), None, None, None,
            monotone_within(vals, ses, increasing=False))

    # noiseless point: pooled centroids are exact
    g = max(cfg.gaps)
    p = cfg.block_model_params(tau=0.0, sigma=0.0, gap_target=g, relevant=k)
    est = selection_match_prob(p, k, min(cfg.trials, 256))
    bound = theorem_bound(BoundInputs(g, p.norm_bound, 0.0, 0.0, p.block_size, p.head_dim,
                                      k, p.blocks, c))
    add("noiseless_match", _fmt(gap=g), est.per_block, est.per_block_se, bound.value,
        est.per_block == 1.0 and not bound.vacuous)

    # recall against budget times match probability
    for gamma in cfg.corollary_budgets:
        p = cfg.block_model_params(blocks=cfg.corollary_blocks, gap_target=None, relevant=1)
        cc = recall_corollary_check(p, gamma, cfg.trials)
        add("recall_corollary", _fmt(budget=gamma, blocks=p.blocks), cc.mean_recall,
            cc.combined_se, cc.bound, cc.holds(3.0))

    return TheoryResult(rows, c, checks)
