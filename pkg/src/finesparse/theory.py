"""Closed-form selection bounds and their Monte Carlo validation.

Under the block representation model each pooled centroid is its block
centroid plus Gaussian noise of per-coordinate variance
``delta^2 = tau^2 + sigma^2 / B``. The functions here evaluate the resulting
bounds on the probability that centroid dot-product ranking recovers the
top-K key blocks by exact attention mass, and measure the same quantities
empirically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .attention import as_tokens
from .masks import block_sums, budget_to_k, mean_pool, topk_rows
from .synthetic import BlockModelParams, make_centroids, monte_carlo_batches

VALIDATION_HEADER = ("experiment", "param_set", "estimate", "stderr", "bound", "pass")

#: cap for the calibrated constant when the grid puts no constraint on it
C_MAX = 10.0


# ---------------------------------------------------------------------------
# selections
# ---------------------------------------------------------------------------

def block_mass(scores, block_size: int) -> np.ndarray:
    """alpha[u, v]: attention mass between query block u and key block v."""
    return block_sums(np.asarray(scores), block_size)


def oracle_topk(scores, block_size: int, k: int) -> np.ndarray:
    """(M, M) boolean selection of the K key blocks with the most attention mass."""
    alpha = block_mass(scores, block_size)
    if k > alpha.shape[1]:
        raise ValueError(f"K={k} exceeds M={alpha.shape[1]}")
    return topk_rows(alpha, k)


def centroid_topk(q, k, block_size: int, top: int) -> np.ndarray:
    """Selection by dot products of mean-pooled block centroids."""
    q, k = as_tokens(q, "q"), as_tokens(k, "k")
    s = mean_pool(q, block_size) @ mean_pool(k, block_size).T
    if top > s.shape[1]:
        raise ValueError(f"K={top} exceeds M={s.shape[1]}")
    return topk_rows(s, top)


def _batch_alpha(q: np.ndarray, k: np.ndarray, m: int, b: int) -> np.ndarray:
    """Exact block attention mass for stacked draws, (draws, M, M)."""
    logits = np.einsum("nid,njd->nij", q, k) / math.sqrt(q.shape[-1])
    logits -= logits.max(axis=-1, keepdims=True)
    a = np.exp(logits)
    a /= a.sum(axis=-1, keepdims=True)
    n = q.shape[0]
    return a.reshape(n, m, b, m, b).sum(axis=(2, 4))


def _batch_centroid_scores(q: np.ndarray, k: np.ndarray, m: int, b: int) -> np.ndarray:
    n, _, d = q.shape
    qh = q.reshape(n, m, b, d).mean(axis=2)
    kh = k.reshape(n, m, b, d).mean(axis=2)
    return np.einsum("nud,nvd->nuv", qh, kh)


# ---------------------------------------------------------------------------
# Monte Carlo estimates
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MatchEstimate:
    per_block: float
    per_block_se: float
    joint: float
    joint_se: float
    trials: int
    per_u: np.ndarray


def _mean_se(values: np.ndarray) -> tuple[float, float]:
    values = np.asarray(values, dtype=np.float64)
    if values.size < 2:
        return float(values.mean()), 0.0
    return float(values.mean()), float(values.std(ddof=1) / math.sqrt(values.size))


MATCH_REFERENCES = ("attention", "centroid")


def selection_match_prob(params: BlockModelParams, k: int, trials: int,
                         reference: str = "attention") -> MatchEstimate:
    """How often centroid top-K equals the reference top-K.

    With ``reference="attention"`` the reference is the top-K by exact
    attention mass of the same draw. With ``"centroid"`` it is the top-K of
    the population dot products of the block centroids, fixed across draws.
    ``per_block`` is the chance for a single query block (what the bound
    covers); ``joint`` requires every query block to match in the same draw.
    """
    if trials < 1:
        raise ValueError("trials must be positive")
    if reference not in MATCH_REFERENCES:
        raise ValueError(f"reference must be one of {MATCH_REFERENCES}")
    m, b = params.blocks, params.block_size
    if not 1 <= k <= m:
        raise ValueError(f"K={k} outside [1, {m}]")
    cents = make_centroids(params)
    fixed = topk_rows(cents.dots(), k) if reference == "centroid" else None
    matches = []
    for batch in monte_carlo_batches(params, cents, trials, tag=1):
        guess = topk_rows(_batch_centroid_scores(batch.q, batch.k, m, b), k)
        truth = fixed if fixed is not None else topk_rows(_batch_alpha(batch.q, batch.k, m, b), k)
        matches.append((truth == guess).all(axis=-1))
    matches = np.concatenate(matches)  # (trials, M)
    per_draw = matches.mean(axis=1)
    p, se = _mean_se(per_draw)
    joint = float(matches.all(axis=1).mean())
    return MatchEstimate(
        p, se, joint, math.sqrt(joint * (1 - joint) / trials), trials, matches.mean(axis=0)
    )


@dataclass(frozen=True)
class ScoreCheck:
    u: int
    v: int
    empirical: float
    analytic: float
    stderr: float

    @property
    def z(self) -> float:
        diff = self.empirical - self.analytic
        # stderr at rounding level means the draws were constant
        if self.stderr <= 1e-12 * max(1.0, abs(self.analytic)):
            return 0.0 if abs(diff) <= 1e-9 * max(1.0, abs(self.analytic)) else math.inf
        return diff / self.stderr


def score_expectation_check(params: BlockModelParams, trials: int) -> list[ScoreCheck]:
    """Empirical mean of pooled-centroid dot products against the centroid dot products."""
    if trials < 100:
        raise ValueError("score_expectation_check needs at least 100 trials")
    m, b = params.blocks, params.block_size
    cents = make_centroids(params)
    samples = np.concatenate([
        _batch_centroid_scores(batch.q, batch.k, m, b)
        for batch in monte_carlo_batches(params, cents, trials, tag=2)
    ])
    mean = samples.mean(axis=0)
    se = samples.std(axis=0, ddof=1) / math.sqrt(trials)
    analytic = cents.dots()
    return [
        ScoreCheck(u, v, float(mean[u, v]), float(analytic[u, v]), float(se[u, v]))
        for u in range(m) for v in range(m)
    ]


@dataclass(frozen=True)
class VarianceCheck:
    empirical: float
    expected: float

    @property
    def relative_error(self) -> float:
        if self.expected == 0:
            return 0.0 if self.empirical == 0 else math.inf
        return abs(self.empirical - self.expected) / self.expected


def pooled_noise_variance_check(params: BlockModelParams, trials: int) -> VarianceCheck:
    """Per-coordinate variance of pooled token noise (pooled q minus centroid minus drift)."""
    m, b, d = params.blocks, params.block_size, params.head_dim
    cents = make_centroids(params)
    resid = []
    for batch in monte_carlo_batches(params, cents, trials, tag=3):
        pooled = batch.q.reshape(-1, m, b, d).mean(axis=2)
        resid.append((pooled - cents.q[None] - batch.q_drift).ravel())
    resid = np.concatenate(resid)
    return VarianceCheck(float(resid.var(ddof=1)), params.sigma**2 / b)


@dataclass(frozen=True)
class PairwiseEstimate:
    probability: float
    stderr: float
    gap: float
    delta_sq: float
    linear_term: float
    quad_arg: float
    q_norm_sq: float
    keydiff_norm_sq: float


def pairwise_misorder_prob(params: BlockModelParams, trials: int) -> PairwiseEstimate:
    """P(pooled score of a relevant key block < that of an irrelevant one).

    Uses the gap construction with one relevant block and compares, for query
    block 0, the relevant key block against the first irrelevant one.
    """
    if params.gap_target is None or params.gap_target <= 0:
        raise ValueError("pairwise check needs a positive gap_target")
    params = replace(params, relevant=1)
    m, b, d = params.blocks, params.block_size, params.head_dim
    cents = make_centroids(params)
    dots = cents.dots()[0]
    v = int(np.argmax(dots))
    w = int(next(j for j in range(m) if j != v))
    below = []
    for batch in monte_carlo_batches(params, cents, trials, tag=4):
        s = _batch_centroid_scores(batch.q, batch.k, m, b)[:, 0]
        below.append(s[:, v] - s[:, w] < 0)
    below = np.concatenate(below)
    p = float(below.mean())
    gap = float(dots[v] - dots[w])
    ds = params.delta_sq
    q_norm_sq = float(cents.q[0] @ cents.q[0])
    kd = cents.k[v] - cents.k[w]
    keydiff_norm_sq = float(kd @ kd)
    lin = pairwise_misorder_bound(gap, q_norm_sq, keydiff_norm_sq, ds, d, c=math.inf)
    return PairwiseEstimate(
        p, math.sqrt(p * (1 - p) / trials), gap, ds, lin, _quad_arg(gap, ds, d),
        q_norm_sq, keydiff_norm_sq,
    )


@dataclass(frozen=True)
class CorollaryCheck:
    budget: float
    mean_recall: float
    recall_se: float
    match_prob: float
    match_se: float

    @property
    def bound(self) -> float:
        return self.budget * self.match_prob

    @property
    def margin(self) -> float:
        return self.mean_recall - self.bound

    @property
    def combined_se(self) -> float:
        return math.hypot(self.recall_se, self.budget * self.match_se)

    def holds(self, n_se: float = 3.0) -> bool:
        return self.margin >= -n_se * self.combined_se


def recall_corollary_check(params: BlockModelParams, budget: float, trials: int) -> CorollaryCheck:
    """Mean per-query-block recall under centroid selection against budget * P(match).

    The budget is snapped to K/M with K = round(budget * M).
    """
    m, b = params.blocks, params.block_size
    k = budget_to_k(budget, m)
    cents = make_centroids(params)
    recalls, matches = [], []
    for batch in monte_carlo_batches(params, cents, trials, tag=5):
        alpha = _batch_alpha(batch.q, batch.k, m, b)
        truth = topk_rows(alpha, k)
        guess = topk_rows(_batch_centroid_scores(batch.q, batch.k, m, b), k)
        r = (alpha * guess).sum(axis=-1) / alpha.sum(axis=-1)
        recalls.append(r.mean(axis=1))
        matches.append((truth == guess).all(axis=-1).mean(axis=1))
    r_mean, r_se = _mean_se(np.concatenate(recalls))
    p_mean, p_se = _mean_se(np.concatenate(matches))
    return CorollaryCheck(k / m, r_mean, r_se, p_mean, p_se)


# ---------------------------------------------------------------------------
# closed forms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BoundInputs:
    gap: float
    norm_bound: float
    tau: float
    sigma: float
    block_size: int
    head_dim: int
    k: int
    blocks: int
    c: float = 0.1

    def __post_init__(self):
        if self.k > self.blocks:
            raise ValueError("K must not exceed M")

    @property
    def delta_sq(self) -> float:
        return self.tau**2 + self.sigma**2 / self.block_size


@dataclass(frozen=True)
class BoundValue:
    value: float
    phi1: float
    phi2: float

    @property
    def vacuous(self) -> bool:
        return self.value <= 0.0


def _quad_arg(gap: float, delta_sq: float, d: int) -> float:
    if delta_sq == 0:
        return math.inf
    return min(gap**2 / (delta_sq**2 * d), gap / delta_sq)


def theorem_bound(inputs: BoundInputs) -> BoundValue:
    """Lower bound on P(centroid top-K equals exact top-K); may be negative."""
    if inputs.gap <= 0 or inputs.norm_bound <= 0 or inputs.c <= 0:
        raise ValueError("gap, norm_bound and c must be positive")
    ds = inputs.delta_sq
    phi1 = math.inf if ds == 0 else inputs.gap**2 / (48.0 * inputs.norm_bound * ds)
    phi2 = inputs.c * _quad_arg(inputs.gap, ds, inputs.head_dim)
    pairs = inputs.k * (inputs.blocks - inputs.k)
    return BoundValue(1.0 - pairs * (math.exp(-phi1) + math.exp(-phi2)), phi1, phi2)


def pairwise_misorder_bound(gap: float, q_norm_sq: float, keydiff_norm_sq: float,
                            delta_sq: float, d: int, c: float) -> float:
    """Upper bound on P(D < 0) for one (relevant, irrelevant) key block pair."""
    if gap <= 0:
        raise ValueError("gap must be positive")
    if delta_sq == 0:
        return 0.0
    spread = keydiff_norm_sq + 2.0 * q_norm_sq
    linear = math.exp(-gap**2 / (8.0 * spread * delta_sq)) if spread > 0 else 0.0
    return linear + math.exp(-c * _quad_arg(gap, delta_sq, d))


def calibrate_c(points: list[PairwiseEstimate], c_max: float = C_MAX) -> float:
    """Largest c (at most ``c_max``) keeping every grid estimate under the pairwise bound."""
    c = c_max
    for pt in points:
        excess = pt.probability - pt.linear_term
        if excess <= 0 or pt.quad_arg == math.inf:
            continue
        c = min(c, -math.log(excess) / pt.quad_arg)
    return c


def monotone_within(values, stderrs, increasing: bool = True, n_se: float = 2.0) -> bool:
    """True when no later value falls below (or above) an earlier one by more than n_se."""
    values = np.asarray(values, dtype=np.float64)
    stderrs = np.asarray(stderrs, dtype=np.float64)
    sign = 1.0 if increasing else -1.0
    for i in range(values.size):
        for j in range(i + 1, values.size):
            slack = n_se * math.hypot(stderrs[i], stderrs[j])
            if sign * (values[j] - values[i]) < -slack:
                return False
    return True
