"""Seeded synthetic workloads.

Randomness comes from counter-based Philox streams keyed by
``(seed, *labels)`` through :class:`numpy.random.SeedSequence`, so every
tensor, layer, head, step and Monte Carlo batch draws from its own
independent stream and results do not depend on evaluation order. Normal
variates use numpy's ziggurat sampler (``Generator.standard_normal``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .curve import GridDims

# stream labels
Q, K, V = 0, 1, 2
_CENTROIDS = 10
_FIELD = 11
_TRAJECTORY = 12
_MONTE_CARLO = 13
_MIXED = 14
_DERIVED = 15

#: draws per Monte Carlo batch; fixed so results do not depend on chunking
MC_BATCH = 256


def stream(seed: int, *labels: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(x) for x in labels))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, *labels: int) -> int:
    ss = np.random.SeedSequence(int(seed), spawn_key=(_DERIVED, *(int(x) for x in labels)))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _unit_rows(rng: np.random.Generator, rows: int, d: int) -> np.ndarray:
    x = rng.standard_normal((rows, d))
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    while (norms == 0).any():
        x = rng.standard_normal((rows, d))
        norms = np.linalg.norm(x, axis=1, keepdims=True)
    return x / norms


# ---------------------------------------------------------------------------
# block representation model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BlockModelParams:
    blocks: int = 8
    block_size: int = 16
    head_dim: int = 16
    tau: float = 0.1
    sigma: float = 0.1
    norm_bound: float = 1.0
    gap_target: float | None = None
    relevant: int = 1
    seed: int = 0

    def __post_init__(self):
        if min(self.blocks, self.block_size, self.head_dim) < 1:
            raise ValueError("blocks, block_size and head_dim must be positive")
        if self.tau < 0 or self.sigma < 0:
            raise ValueError("tau and sigma must be non-negative")
        if self.norm_bound <= 0:
            raise ValueError("norm_bound must be positive")
        if not 1 <= self.relevant <= self.blocks:
            raise ValueError("relevant must lie in [1, blocks]")

    @property
    def tokens(self) -> int:
        return self.blocks * self.block_size

    @property
    def delta_sq(self) -> float:
        """Variance of each pooled-centroid coordinate around its mean."""
        return self.tau**2 + self.sigma**2 / self.block_size


@dataclass(frozen=True)
class Centroids:
    q: np.ndarray  # (M, d)
    k: np.ndarray  # (M, d)

    def dots(self) -> np.ndarray:
        return self.q @ self.k.T


def make_centroids(params: BlockModelParams) -> Centroids:
    """Deterministic block centroids with squared norms at most ``norm_bound``.

    Without ``gap_target`` every centroid is a random direction at the
    norm bound. With ``gap_target`` all query centroids share one direction
    ``e``; ``relevant`` randomly chosen key blocks get a component of
    ``gap_target / sqrt(C)`` along ``e`` and the others are orthogonal to it,
    so every query block sees exactly that minimum gap. The orthogonal parts
    are mutually orthonormal whenever ``head_dim > blocks``.
    """
    m, d, c = params.blocks, params.head_dim, params.norm_bound
    rng = stream(params.seed, _CENTROIDS)
    # a hair inside the bound so rounding can never push a norm over it
    radius = math.sqrt(c) * (1.0 - 1e-12)
    if params.gap_target is None:
        return Centroids(_unit_rows(rng, m, d) * radius, _unit_rows(rng, m, d) * radius)

    gap = float(params.gap_target)
    if gap < 0:
        raise ValueError("gap_target must be non-negative")
    if gap > c * (1.0 + 1e-9) or d < 2:
        raise ValueError(
            f"gap_target {gap} infeasible under norm bound {c} with head_dim {d}"
        )
    along = min(gap / radius, radius)
    e = _unit_rows(rng, 1, d)[0]
    ortho = rng.standard_normal((m, d))
    ortho -= np.outer(ortho @ e, e)
    if m <= d - 1:
        # mutually orthonormal, so key blocks are exchangeable around e
        basis, _ = np.linalg.qr(np.column_stack([e, ortho.T]))
        ortho = basis[:, 1:].T
    ortho /= np.linalg.norm(ortho, axis=1, keepdims=True)
    chosen = rng.permutation(m)[: params.relevant]
    is_rel = np.zeros(m, dtype=bool)
    is_rel[chosen] = True
    kbar = ortho * radius
    kbar[is_rel] = along * e + ortho[is_rel] * math.sqrt(max(radius**2 - along**2, 0.0))
    qbar = np.tile(e * radius, (m, 1))
    return Centroids(qbar, kbar)


def centroid_gaps(cents: Centroids, k: int) -> np.ndarray:
    """Per query block, the K-th minus (K+1)-th largest centroid dot product."""
    dots = np.sort(cents.dots(), axis=1)[:, ::-1]
    if k >= dots.shape[1]:
        return np.full(dots.shape[0], np.inf)
    return dots[:, k - 1] - dots[:, k]


@dataclass
class BlockDraws:
    """Stacked draws of the block model; leading axis indexes draws."""

    q: np.ndarray        # (draws, N, d)
    k: np.ndarray        # (draws, N, d)
    q_drift: np.ndarray  # (draws, M, d)
    k_drift: np.ndarray  # (draws, M, d)


def _side(rng, center, draws, params: BlockModelParams):
    m, b, d = params.blocks, params.block_size, params.head_dim
    drift = rng.standard_normal((draws, m, d)) * params.tau
    noise = rng.standard_normal((draws, m, b, d)) * params.sigma
    x = center[None, :, None, :] + drift[:, :, None, :] + noise
    return x.reshape(draws, m * b, d), drift


def sample_block_model(params: BlockModelParams, cents: Centroids, draws: int,
                       q_rng: np.random.Generator, k_rng: np.random.Generator) -> BlockDraws:
    q, qd = _side(q_rng, cents.q, draws, params)
    k, kd = _side(k_rng, cents.k, draws, params)
    return BlockDraws(q, k, qd, kd)


def monte_carlo_batches(params: BlockModelParams, cents: Centroids, trials: int, tag: int = 0):
    """Yield :class:`BlockDraws` batches totalling ``trials`` draws."""
    for index, start in enumerate(range(0, trials, MC_BATCH)):
        n = min(MC_BATCH, trials - start)
        yield sample_block_model(
            params, cents, n,
            stream(params.seed, _MONTE_CARLO, tag, index, Q),
            stream(params.seed, _MONTE_CARLO, tag, index, K),
        )


@dataclass
class BlockModelSample:
    q: np.ndarray
    k: np.ndarray
    centroids: Centroids
    q_drift: np.ndarray
    k_drift: np.ndarray


def gen_block_model(params: BlockModelParams) -> BlockModelSample:
    cents = make_centroids(params)
    draws = sample_block_model(params, cents, 1, stream(params.seed, Q), stream(params.seed, K))
    return BlockModelSample(
        draws.q[0].astype(np.float32),
        draws.k[0].astype(np.float32),
        cents,
        draws.q_drift[0],
        draws.k_drift[0],
    )


# ---------------------------------------------------------------------------
# spatially correlated video fields
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FieldParams:
    dims: GridDims
    head_dim: int = 16
    smoothness: float = 4.0
    seed: int = 0
    scale: float = 1.0
    qk_correlation: float = 0.0

    def __post_init__(self):
        if not -1.0 <= self.qk_correlation <= 1.0:
            raise ValueError("qk_correlation must lie in [-1, 1]")
        if self.smoothness < 0:
            raise ValueError("smoothness must be non-negative")
        if self.head_dim < 1:
            raise ValueError("head_dim must be positive")


def _smooth_once(x: np.ndarray) -> np.ndarray:
    p = np.pad(x, ((1, 1), (1, 1), (1, 1), (0, 0)), mode="edge")
    c = p[1:-1, 1:-1, 1:-1]
    total = (
        c
        + p[:-2, 1:-1, 1:-1] + p[2:, 1:-1, 1:-1]
        + p[1:-1, :-2, 1:-1] + p[1:-1, 2:, 1:-1]
        + p[1:-1, 1:-1, :-2] + p[1:-1, 1:-1, 2:]
    )
    return total / 7.0


def smooth(x: np.ndarray, amount: float) -> np.ndarray:
    """``floor(amount)`` stencil passes, then a partial pass for the remainder."""
    whole = int(math.floor(amount))
    for _ in range(whole):
        x = _smooth_once(x)
    frac = amount - whole
    if frac > 0:
        x = (1.0 - frac) * x + frac * _smooth_once(x)
    return x


def _field(params: FieldParams, rng: np.random.Generator) -> np.ndarray:
    f, h, w = params.dims.shape
    x = smooth(rng.standard_normal((f, h, w, params.head_dim)), params.smoothness)
    std = x.std()
    if std > 0:
        x = x / std
    return (x * params.scale).reshape(f * h * w, params.head_dim)


def _base_fields(params: FieldParams):
    q, k, v = (_field(params, stream(params.seed, _FIELD, tag)) for tag in (Q, K, V))
    rho = params.qk_correlation
    if rho:
        # keys partly reuse the query field so attention favours nearby tokens
        k = rho * q + math.sqrt(1.0 - rho * rho) * k
    return q, k, v


def gen_video_field(params: FieldParams):
    """(q, k, v) float32: smoothed, standardised fields, keys optionally tied to queries."""
    return tuple(x.astype(np.float32) for x in _base_fields(params))


def noise_levels(steps: int, noise_start: float, noise_end: float) -> np.ndarray:
    if steps < 1:
        raise ValueError("steps must be positive")
    if not noise_start >= noise_end >= 0:
        raise ValueError("need noise_start >= noise_end >= 0")
    if steps == 1:
        return np.array([float(noise_start)])
    return np.linspace(noise_start, noise_end, steps)


def gen_denoising_trajectory(params: FieldParams, steps: int, noise_start: float,
                             noise_end: float) -> list:
    """Per-step (q, k, v): a fixed smooth base plus noise decaying linearly."""
    base = _base_fields(params)
    out = []
    for t, level in enumerate(noise_levels(steps, noise_start, noise_end)):
        triple = []
        for tag, b in zip((Q, K, V), base):
            x = b
            if level > 0:
                x = b + level * stream(params.seed, _TRAJECTORY, t, tag).standard_normal(b.shape)
            triple.append(x.astype(np.float32))
        out.append(tuple(triple))
    return out


class TrajectoryWorkload:
    """Denoising trajectories for every (layer, head), each with its own seed."""

    def __init__(self, params: FieldParams, steps: int, noise_start: float, noise_end: float,
                 layers: int = 1, heads: int = 1):
        self.params, self.steps = params, steps
        self.noise_start, self.noise_end = noise_start, noise_end
        self.layers, self.heads = layers, heads
        self._cache: dict = {}

    def trajectory(self, layer: int, head: int) -> list:
        key = (layer, head)
        if key not in self._cache:
            seed = derive_seed(self.params.seed, layer, head)
            p = replace(self.params, seed=seed)
            self._cache[key] = gen_denoising_trajectory(p, self.steps, self.noise_start,
                                                        self.noise_end)
        return self._cache[key]

    def tokens(self, step: int, layer: int, head: int):
        if step >= self.steps:
            raise IndexError(f"workload exhausted at step {step}")
        return self.trajectory(layer, head)[step]


# ---------------------------------------------------------------------------
# mixed-semantic blocks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MixedParams:
    tokens: int = 2048
    head_dim: int = 16
    segment: int = 16
    clusters: int = 16
    noise: float = 0.5
    scale: float = 2.0
    seed: int = 0


def gen_mixed_semantic(params: MixedParams):
    """Runs of ``segment`` tokens share one of ``clusters`` semantic centres.

    Queries and keys of a run sit around the same centre, so attention
    concentrates on same-cluster runs scattered across many blocks; any block
    longer than ``segment`` mixes several centres.
    """
    rng = stream(params.seed, _MIXED)
    d = params.head_dim
    centres = _unit_rows(rng, params.clusters, d) * params.scale
    runs = -(-params.tokens // params.segment)
    labels = np.repeat(rng.integers(0, params.clusters, size=runs), params.segment)
    labels = labels[: params.tokens]
    q = centres[labels] + params.noise * rng.standard_normal((params.tokens, d))
    k = centres[labels] + params.noise * rng.standard_normal((params.tokens, d))
    v = rng.standard_normal((params.tokens, d))
    return tuple(x.astype(np.float32) for x in (q, k, v))
