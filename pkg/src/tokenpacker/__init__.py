"""Visual token compression engine.

Compresses N visual feature embeddings into M = N / scale^2 tokens through
local point-to-region attention, plans aspect-preserving grid partitions for
arbitrary image resolutions, assembles separator-annotated token sequences,
and quantifies the quadratic sequence-cost savings.
"""

from .layout import TokenSequence, assemble, parse, token_count
from .projector import (
    LevelFeatures,
    ProjectorConfig,
    ProjectorWeights,
    backward,
    baseline_avgpool,
    baseline_mlp,
    baseline_pixelshuffle,
    build_point_region_pairs,
    forward,
    init_weights,
    inject,
    make_query,
)
from .slicer import (
    GridScore,
    GridSpec,
    SlicePlan,
    baseline_fixed_split,
    enumerate_grids,
    make_slice_plan,
    overlap_score,
    padding_score,
    select_grid,
)
from .tensor import Rng, bilinear_downsample, init_uniform, matmul, softmax_last

__version__ = "0.1.0"

__all__ = [
    "LevelFeatures",
    "ProjectorConfig",
    "ProjectorWeights",
    "Rng",
    "GridScore",
    "GridSpec",
    "SlicePlan",
    "TokenSequence",
    "assemble",
    "backward",
    "baseline_avgpool",
    "baseline_fixed_split",
    "baseline_mlp",
    "baseline_pixelshuffle",
    "bilinear_downsample",
    "build_point_region_pairs",
    "enumerate_grids",
    "forward",
    "init_uniform",
    "init_weights",
    "inject",
    "make_query",
    "make_slice_plan",
    "matmul",
    "overlap_score",
    "padding_score",
    "parse",
    "select_grid",
    "softmax_last",
    "token_count",
]
