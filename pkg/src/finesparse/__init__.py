"""Block-sparse attention with locality-preserving token orderings.

Tokens of a (frames, height, width) latent are reordered along a 3D Hilbert
curve, key blocks are ranked with hierarchical sub-block scores, each query
block keeps its top-K key blocks, and masks are cached across denoising
steps under an adaptive budget schedule.
"""

from ._backend import BACKEND
from .attention import (
    BlockMask,
    attention_recall,
    attention_scores,
    block_sparse_attention,
    full_attention,
    masked_scores,
)
from .curve import (
    GridDims,
    Permutation,
    apply_permutation,
    block3d_order,
    hilbert2d_order,
    hilbert3d_order,
    invert_permutation,
    make_order,
    raster_order,
)
from .masks import (
    ScoringParams,
    aggregate_scores,
    build_mask,
    mean_pool,
    subblock_scores,
    topk_select,
)
from .schedule import MaskCache, SparsitySchedule, run_step, run_trajectory, should_update

__all__ = [
    "BACKEND",
    "BlockMask",
    "GridDims",
    "MaskCache",
    "Permutation",
    "ScoringParams",
    "SparsitySchedule",
    "aggregate_scores",
    "apply_permutation",
    "attention_recall",
    "attention_scores",
    "block3d_order",
    "block_sparse_attention",
    "build_mask",
    "full_attention",
    "hilbert2d_order",
    "hilbert3d_order",
    "invert_permutation",
    "make_order",
    "masked_scores",
    "mean_pool",
    "raster_order",
    "run_step",
    "run_trajectory",
    "should_update",
    "subblock_scores",
    "topk_select",
]
