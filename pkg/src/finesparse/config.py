"""JSON run configuration shared by every CLI command."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields

from .curve import ORDERINGS, GridDims
from .masks import ScoringParams
from .schedule import SparsitySchedule
from .synthetic import BlockModelParams, FieldParams, MixedParams

SEED_ENV = "DFS_SEED_OVERRIDE"

GENERATORS = ("field", "block_model", "mixed")


def _default_lemma_sets():
    return [
        {"blocks": 4, "block_size": 8, "head_dim": 8, "tau": 0.0, "sigma": 1.0},
        {"blocks": 4, "block_size": 16, "head_dim": 8, "tau": 0.5, "sigma": 1.0},
        {"blocks": 3, "block_size": 4, "head_dim": 16, "tau": 0.2, "sigma": 0.5},
        {"blocks": 6, "block_size": 32, "head_dim": 4, "tau": 1.0, "sigma": 2.0},
        {"blocks": 2, "block_size": 64, "head_dim": 32, "tau": 0.1, "sigma": 3.0},
    ]


@dataclass
class RunConfig:
    seed: int = 0
    threads: int = 1

    # schedule and pipeline
    total_steps: int = 50
    warmup_fraction: float = 0.25
    phase_budgets: list = field(default_factory=lambda: [0.3, 0.2, 0.1])
    phase_fraction: float = 0.25
    update_interval: int = 12
    dense_layers: list = field(default_factory=list)
    ordering: str = "hilbert3d"
    block_size: int = 128
    sub_block_size: int = 16

    # workload
    generator: str = "field"
    input_dir: str | None = None
    dims: list = field(default_factory=lambda: [5, 16, 16])
    head_dim: int = 16
    smoothness: float = 4.0
    scale: float = 2.0
    qk_correlation: float = 0.8
    noise_start: float = 2.0
    noise_end: float = 0.0
    layers: int = 1
    heads: int = 1
    record_recall: bool = True

    # block representation model
    blocks: int = 8
    model_block_size: int = 16
    tau: float = 0.1
    sigma: float = 0.4
    norm_bound: float = 4.0
    gap_target: float | None = None
    relevant: int = 2

    # mixed-semantic workload
    tokens: int = 2048
    segment: int = 16
    clusters: int = 128
    mixed_noise: float = 0.5
    mixed_scale: float = 4.0

    # experiments
    budget: float = 0.2
    seeds: int = 20
    sub_block_sizes: list = field(default_factory=lambda: [1, 16, 32, 64, 128])
    curve_steps: int = 20
    curve_update_interval: int = 1
    trials: int = 1000
    pairwise_trials: int = 10000
    variance_trials: int = 100000
    expectation_trials: int = 10000
    gaps: list = field(default_factory=lambda: [0.25, 0.5, 1.0, 2.0, 4.0])
    deltas: list = field(default_factory=lambda: [0.05, 0.1, 0.2, 0.4, 0.8])
    corollary_budgets: list = field(default_factory=lambda: [0.1, 0.25, 0.5])
    corollary_blocks: int = 20
    c: float | None = None
    lemma_sets: list = field(default_factory=_default_lemma_sets)

    def __post_init__(self):
        if self.generator not in GENERATORS:
            raise ValueError(f"generator must be one of {GENERATORS}")
        if self.ordering.lower() not in ORDERINGS:
            raise ValueError(f"ordering must be one of {ORDERINGS}")
        if len(self.dims) != 3:
            raise ValueError("dims must be [frames, height, width]")
        if self.threads < 0:
            raise ValueError("threads must be >= 0")
        if self.seed < 0 or self.seed >= 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path=None) -> "RunConfig":
        data = {}
        if path is not None:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
            if not isinstance(data, dict):
                raise ValueError("config must be a JSON object")
        override = os.environ.get(SEED_ENV)
        if override:
            if not override.isdigit():
                raise ValueError(f"{SEED_ENV} must be a decimal unsigned integer")
            data["seed"] = int(override)
        return cls.from_dict(data)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @property
    def worker_count(self) -> int:
        return self.threads or (os.cpu_count() or 1)

    def grid(self) -> GridDims:
        return GridDims(*self.dims)

    def schedule(self) -> SparsitySchedule:
        return SparsitySchedule(
            total_steps=self.total_steps,
            warmup_fraction=self.warmup_fraction,
            phase_budgets=tuple(self.phase_budgets),
            phase_fraction=self.phase_fraction,
            update_interval=self.update_interval,
            dense_layers=tuple(self.dense_layers),
        )

    def scoring(self, sub_block_size: int | None = None) -> ScoringParams:
        return ScoringParams(self.block_size, sub_block_size or self.sub_block_size)

    def field_params(self, seed: int | None = None) -> FieldParams:
        return FieldParams(
            self.grid(), self.head_dim, self.smoothness,
            self.seed if seed is None else seed, self.scale, self.qk_correlation,
        )

    def block_model_params(self, **overrides) -> BlockModelParams:
        values = dict(
            blocks=self.blocks, block_size=self.model_block_size, head_dim=self.head_dim,
            tau=self.tau, sigma=self.sigma, norm_bound=self.norm_bound,
            gap_target=self.gap_target, relevant=self.relevant, seed=self.seed,
        )
        values.update(overrides)
        return BlockModelParams(**values)

    def mixed_params(self, seed: int | None = None) -> MixedParams:
        return MixedParams(
            self.tokens, self.head_dim, self.segment, self.clusters,
            self.mixed_noise, self.mixed_scale, self.seed if seed is None else seed,
        )
