"""Point-to-region injection projector with baselines and analytic gradients.

The projector turns an (grid_h, grid_w, channels) feature map holding N
embeddings into M = N / scale^2 output tokens. A coarse query is built by
bilinear downsampling (or taken from a learned table), each query row attends
over the scale x scale block of high-resolution cells it came from (keys and
values drawn from all reference levels concatenated along channels), and an
MLP refines the result. Attention is strictly local: row m never sees cells
outside its own block.

Block structure (residual around both attention and MLP, no normalization):

    q   = downsample(query_source)                  # (M, C)
    ctx = concat_heads(softmax(Q K^T / sqrt(dh)) V) # per-block attention
    u   = q + ctx @ w_o
    t   = u + gelu(u @ mlp_w1 + mlp_b1) @ mlp_w2 + mlp_b2
    out = t @ w_out + b_out                         # (M, D)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .tensor import (
    Array,
    Rng,
    ShapeError,
    as_tensor,
    bilinear_downsample,
    bilinear_downsample_adjoint,
    gelu,
    gelu_grad,
    init_uniform,
    matmul,
    softmax_last,
)

QUERY_MODES = ("interpolated", "learnable")


class ConfigError(ValueError):
    """Raised when a projector configuration violates its invariants."""


@dataclass(frozen=True)
class ProjectorConfig:
    """Structural parameters of the injection projector.

    ``inner_dim`` defaults to ``channels``; ``heads`` must divide it.
    ``scale`` must divide both grid extents so every query owns a full
    scale x scale block.
    """

    channels: int
    grid_h: int
    grid_w: int
    scale: int
    out_dim: int
    levels: int = 1
    heads: int = 1
    inner_dim: int = 0  # 0 means "use channels"
    mlp_ratio: int = 4
    query_mode: str = "interpolated"

    def __post_init__(self):
        if self.scale not in (2, 3, 4):
            raise ConfigError(f"scale must be 2, 3 or 4, got {self.scale}")
        if min(self.channels, self.grid_h, self.grid_w, self.out_dim) < 1:
            raise ConfigError("channels, grid extents and out_dim must be positive")
        if self.grid_h % self.scale or self.grid_w % self.scale:
            raise ConfigError(
                f"scale {self.scale} does not divide grid {self.grid_h}x{self.grid_w}"
            )
        if self.levels < 1:
            raise ConfigError("levels must be >= 1")
        if self.mlp_ratio < 1:
            raise ConfigError("mlp_ratio must be >= 1")
        if self.inner_dim == 0:
            object.__setattr__(self, "inner_dim", self.channels)
        if self.inner_dim < 1 or self.inner_dim % self.heads:
            raise ConfigError(
                f"inner_dim {self.inner_dim} must be positive and divisible by heads {self.heads}"
            )
        if self.query_mode not in QUERY_MODES:
            raise ConfigError(f"query_mode must be one of {QUERY_MODES}")

    @property
    def low_h(self) -> int:
        return self.grid_h // self.scale

    @property
    def low_w(self) -> int:
        return self.grid_w // self.scale

    @property
    def tokens(self) -> int:
        """Output token count M = grid_h * grid_w / scale^2."""
        return self.low_h * self.low_w

    @property
    def region_cells(self) -> int:
        return self.scale * self.scale

    @property
    def kv_channels(self) -> int:
        return self.levels * self.channels

    @property
    def head_dim(self) -> int:
        return self.inner_dim // self.heads

    @property
    def hidden_dim(self) -> int:
        return self.mlp_ratio * self.channels


@dataclass(frozen=True)
class ProjectorWeights:
    w_q: Array
    w_k: Array
    w_v: Array
    w_o: Array
    mlp_w1: Array
    mlp_b1: Array
    mlp_w2: Array
    mlp_b2: Array
    w_out: Array
    b_out: Array
    learnable_query: Array | None = None


def expected_weight_shapes(cfg: ProjectorConfig) -> dict[str, tuple[int, ...]]:
    """Section name -> required shape, in canonical serialization order."""
    shapes = {
        "w_q": (cfg.channels, cfg.inner_dim),
        "w_k": (cfg.kv_channels, cfg.inner_dim),
        "w_v": (cfg.kv_channels, cfg.inner_dim),
        "w_o": (cfg.inner_dim, cfg.channels),
        "mlp_w1": (cfg.channels, cfg.hidden_dim),
        "mlp_b1": (cfg.hidden_dim,),
        "mlp_w2": (cfg.hidden_dim, cfg.channels),
        "mlp_b2": (cfg.channels,),
        "w_out": (cfg.channels, cfg.out_dim),
        "b_out": (cfg.out_dim,),
    }
    if cfg.query_mode == "learnable":
        shapes["learnable_query"] = (cfg.tokens, cfg.channels)
    return shapes


def validate_weights(cfg: ProjectorConfig, weights: ProjectorWeights) -> None:
    """Check every weight tensor against the config; raise ShapeError on mismatch."""
    for name, want in expected_weight_shapes(cfg).items():
        got = getattr(weights, name)
        if got is None:
            raise ShapeError(f"weight section '{name}' is missing")
        if got.shape != want:
            raise ShapeError(f"weight section '{name}' has shape {got.shape}, expected {want}")
        if not np.all(np.isfinite(got)):
            raise ValueError(f"weight section '{name}' contains NaN or Inf")


def init_weights(cfg: ProjectorConfig, rng: Rng) -> ProjectorWeights:
    """Seeded Glorot-uniform weights; biases start at zero.

    Matrices are drawn in a fixed order (w_q, w_k, w_v, w_o, mlp_w1, mlp_w2,
    w_out, learnable_query) so a seed fully determines the result.
    """
    c, d = cfg.channels, cfg.inner_dim
    kv, hid = cfg.kv_channels, cfg.hidden_dim
    w = ProjectorWeights(
        w_q=init_uniform(rng, (c, d), c, d),
        w_k=init_uniform(rng, (kv, d), kv, d),
        w_v=init_uniform(rng, (kv, d), kv, d),
        w_o=init_uniform(rng, (d, c), d, c),
        mlp_w1=init_uniform(rng, (c, hid), c, hid),
        mlp_b1=np.zeros(hid),
        mlp_w2=init_uniform(rng, (hid, c), hid, c),
        mlp_b2=np.zeros(c),
        w_out=init_uniform(rng, (c, cfg.out_dim), c, cfg.out_dim),
        b_out=np.zeros(cfg.out_dim),
    )
    if cfg.query_mode == "learnable":
        w = replace(w, learnable_query=init_uniform(rng, (cfg.tokens, c), c, c))
    return w


@dataclass(frozen=True)
class LevelFeatures:
    """Reference feature levels plus the tensor the coarse query is built from.

    Every tensor is (grid_h, grid_w, channels); all levels share one extent.
    """

    levels: tuple[Array, ...]
    query_source: Array

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(as_tensor(t) for t in self.levels))
        object.__setattr__(self, "query_source", as_tensor(self.query_source))
        if not self.levels:
            raise ShapeError("LevelFeatures needs at least one level")
        base = self.levels[0].shape
        if len(base) != 3:
            raise ShapeError(f"level tensors must be (h, w, C), got {base}")
        for i, t in enumerate(self.levels):
            if t.shape != base:
                raise ShapeError(f"level {i} shape {t.shape} differs from level 0 {base}")
        if self.query_source.shape != base:
            raise ShapeError(
                f"query source shape {self.query_source.shape} differs from levels {base}"
            )


def check_features(cfg: ProjectorConfig, feats: LevelFeatures) -> None:
    want = (cfg.grid_h, cfg.grid_w, cfg.channels)
    if feats.levels[0].shape != want:
        raise ShapeError(f"features are {feats.levels[0].shape}, config wants {want}")
    if len(feats.levels) != cfg.levels:
        raise ShapeError(f"got {len(feats.levels)} levels, config wants {cfg.levels}")


def concat_levels(feats: LevelFeatures) -> Array:
    """Channel-concatenate the levels, in order, to (h, w, L*C)."""
    if len(feats.levels) == 1:
        return feats.levels[0]
    return np.concatenate(feats.levels, axis=2)


def build_point_region_pairs(high: Array, scale: int) -> Array:
    """Rearrange (h, w, C) into (M, scale^2, C) blocks.

    Row m (low-res position (i, j), row-major) holds the scale x scale block
    anchored at (scale*i, scale*j), cells flattened row-major. This is a
    bijective rearrangement; ``point_region_pairs_inverse`` undoes it.
    """
    high = as_tensor(high)
    if high.ndim != 3:
        raise ShapeError(f"expected (h, w, C), got {high.shape}")
    h, w, c = high.shape
    if h % scale or w % scale:
        raise ShapeError(f"scale {scale} does not divide extent {h}x{w}")
    lh, lw = h // scale, w // scale
    blocks = high.reshape(lh, scale, lw, scale, c).transpose(0, 2, 1, 3, 4)
    return np.ascontiguousarray(blocks.reshape(lh * lw, scale * scale, c))


def point_region_pairs_inverse(pairs: Array, grid_h: int, grid_w: int) -> Array:
    """Exact inverse of ``build_point_region_pairs``."""
    pairs = as_tensor(pairs)
    m, cells, c = pairs.shape
    scale = math.isqrt(cells)
    if scale * scale != cells:
        raise ShapeError(f"region cell count {cells} is not a perfect square")
    lh, lw = grid_h // scale, grid_w // scale
    if (lh * scale, lw * scale) != (grid_h, grid_w) or m != lh * lw:
        raise ShapeError(f"{m} regions of {cells} cells do not tile {grid_h}x{grid_w}")
    grid = pairs.reshape(lh, lw, scale, scale, c).transpose(0, 2, 1, 3, 4)
    return np.ascontiguousarray(grid.reshape(grid_h, grid_w, c))


def make_query(cfg: ProjectorConfig, weights: ProjectorWeights, feats: LevelFeatures) -> Array:
    """Coarse (M, C) query: downsampled query source, or the learned table."""
    if cfg.query_mode == "learnable":
        if weights.learnable_query is None:
            raise ConfigError("query_mode is 'learnable' but no learnable_query weights given")
        return weights.learnable_query
    low = bilinear_downsample(feats.query_source, cfg.scale)
    return low.reshape(cfg.tokens, cfg.channels)


@dataclass(frozen=True)
class InjectState:
    """Attention internals exposed for verification."""

    attention: Array  # (M, heads, scale^2), rows sum to 1
    context: Array  # (M, inner_dim), heads concatenated, before w_o


def _split_heads(mat: Array, heads: int) -> Array:
    m, dim = mat.shape[0], mat.shape[-1]
    return mat.reshape(mat.shape[:-1] + (heads, dim // heads))


def _inject_forward(cfg, weights, query, regions) -> dict[str, Array]:
    m = cfg.tokens
    flat_regions = regions.reshape(m * cfg.region_cells, cfg.kv_channels)
    q_proj = matmul(query, weights.w_q)  # (M, d)
    k = matmul(flat_regions, weights.w_k).reshape(m, cfg.region_cells, cfg.heads, cfg.head_dim)
    v = matmul(flat_regions, weights.w_v).reshape(m, cfg.region_cells, cfg.heads, cfg.head_dim)
    qh = _split_heads(q_proj, cfg.heads)  # (M, h, dh)
    logits = np.einsum("mhd,mrhd->mhr", qh, k, optimize=False) / math.sqrt(cfg.head_dim)
    attn = softmax_last(logits)  # (M, h, r)
    ctx = np.einsum("mhr,mrhd->mhd", attn, v, optimize=False).reshape(m, cfg.inner_dim)
    u = query + matmul(ctx, weights.w_o)
    pre = matmul(u, weights.mlp_w1) + weights.mlp_b1
    hid = gelu(pre)
    t = u + matmul(hid, weights.mlp_w2) + weights.mlp_b2
    out = matmul(t, weights.w_out) + weights.b_out
    return {
        "flat_regions": flat_regions, "q_proj": q_proj, "k": k, "v": v,
        "attn": attn, "ctx": ctx, "u": u, "pre": pre, "hid": hid, "t": t, "out": out,
    }


def inject(
    cfg: ProjectorConfig,
    weights: ProjectorWeights,
    query: Array,
    regions: Array,
    return_state: bool = False,
):
    """Region-to-point injection: local cross-attention plus MLP refinement.

    ``query`` is (M, C); ``regions`` is (M, scale^2, levels*channels) as built
    by channel-concatenating the levels and ``build_point_region_pairs``.
    Returns the (M, out_dim) tokens, plus an InjectState when requested.
    """
    query = as_tensor(query)
    regions = as_tensor(regions)
    if query.shape != (cfg.tokens, cfg.channels):
        raise ShapeError(f"query shape {query.shape} != {(cfg.tokens, cfg.channels)}")
    want = (cfg.tokens, cfg.region_cells, cfg.kv_channels)
    if regions.shape != want:
        raise ShapeError(f"regions shape {regions.shape} != {want}")
    if np.isnan(query).any() or np.isnan(regions).any():
        raise ValueError("inject rejects NaN inputs")
    state = _inject_forward(cfg, weights, query, regions)
    if return_state:
        return state["out"], InjectState(attention=state["attn"], context=state["ctx"])
    return state["out"]


def forward(cfg: ProjectorConfig, weights: ProjectorWeights, feats: LevelFeatures) -> Array:
    """Full projector: query, point-region pairs, injection. Returns (M, out_dim)."""
    check_features(cfg, feats)
    query = make_query(cfg, weights, feats)
    regions = build_point_region_pairs(concat_levels(feats), cfg.scale)
    return inject(cfg, weights, query, regions)


@dataclass(frozen=True)
class ProjectorGradients:
    """Gradients of sum(upstream * forward) w.r.t. weights and inputs."""

    w_q: Array
    w_k: Array
    w_v: Array
    w_o: Array
    mlp_w1: Array
    mlp_b1: Array
    mlp_w2: Array
    mlp_b2: Array
    w_out: Array
    b_out: Array
    levels: tuple[Array, ...] = field(default_factory=tuple)
    query_source: Array | None = None
    learnable_query: Array | None = None


def backward(
    cfg: ProjectorConfig,
    weights: ProjectorWeights,
    feats: LevelFeatures,
    upstream: Array,
) -> ProjectorGradients:
    """Exact reverse-mode gradients of sum(upstream * forward(...)).

    Covers every weight tensor, every level tensor and the query source
    (zero in learnable mode, where the learned table gets the query grad).
    """
    check_features(cfg, feats)
    upstream = as_tensor(upstream)
    if upstream.shape != (cfg.tokens, cfg.out_dim):
        raise ShapeError(f"upstream shape {upstream.shape} != {(cfg.tokens, cfg.out_dim)}")

    query = make_query(cfg, weights, feats)
    regions = build_point_region_pairs(concat_levels(feats), cfg.scale)
    s = _inject_forward(cfg, weights, query, regions)
    m, heads, dh = cfg.tokens, cfg.heads, cfg.head_dim

    # output linear
    d_t = matmul(upstream, weights.w_out.T)
    d_w_out = matmul(s["t"].T, upstream)
    d_b_out = upstream.sum(axis=0)

    # residual MLP
    d_u = d_t.copy()
    d_hid = matmul(d_t, weights.mlp_w2.T)
    d_w2 = matmul(s["hid"].T, d_t)
    d_b2 = d_t.sum(axis=0)
    d_pre = d_hid * gelu_grad(s["pre"])
    d_u += matmul(d_pre, weights.mlp_w1.T)
    d_w1 = matmul(s["u"].T, d_pre)
    d_b1 = d_pre.sum(axis=0)

    # residual attention
    d_ctx = matmul(d_u, weights.w_o.T)
    d_w_o = matmul(s["ctx"].T, d_u)
    d_query = d_u.copy()

    d_ctx_h = d_ctx.reshape(m, heads, dh)
    attn, k, v = s["attn"], s["k"], s["v"]
    d_attn = np.einsum("mhd,mrhd->mhr", d_ctx_h, v, optimize=False)
    d_v = np.einsum("mhr,mhd->mrhd", attn, d_ctx_h, optimize=False)
    d_logits = attn * (d_attn - np.sum(attn * d_attn, axis=-1, keepdims=True))
    d_logits /= math.sqrt(dh)
    qh = _split_heads(s["q_proj"], heads)
    d_qh = np.einsum("mhr,mrhd->mhd", d_logits, k, optimize=False)
    d_k = np.einsum("mhr,mhd->mrhd", d_logits, qh, optimize=False)

    d_q_proj = d_qh.reshape(m, cfg.inner_dim)
    d_query += matmul(d_q_proj, weights.w_q.T)
    d_w_q = matmul(query.T, d_q_proj)

    d_k_flat = d_k.reshape(m * cfg.region_cells, cfg.inner_dim)
    d_v_flat = d_v.reshape(m * cfg.region_cells, cfg.inner_dim)
    d_regions_flat = matmul(d_k_flat, weights.w_k.T) + matmul(d_v_flat, weights.w_v.T)
    d_w_k = matmul(s["flat_regions"].T, d_k_flat)
    d_w_v = matmul(s["flat_regions"].T, d_v_flat)

    # undo the point-region rearrangement and the channel concat
    d_stack = point_region_pairs_inverse(
        d_regions_flat.reshape(m, cfg.region_cells, cfg.kv_channels), cfg.grid_h, cfg.grid_w
    )
    c = cfg.channels
    d_levels = tuple(
        np.ascontiguousarray(d_stack[:, :, i * c : (i + 1) * c]) for i in range(cfg.levels)
    )

    d_learnable = None
    if cfg.query_mode == "learnable":
        d_learnable = d_query
        d_source = np.zeros_like(feats.query_source)
    else:
        d_low = d_query.reshape(cfg.low_h, cfg.low_w, c)
        d_source = bilinear_downsample_adjoint(d_low, cfg.grid_h, cfg.grid_w, cfg.scale)

    return ProjectorGradients(
        w_q=d_w_q, w_k=d_w_k, w_v=d_w_v, w_o=d_w_o,
        mlp_w1=d_w1, mlp_b1=d_b1, mlp_w2=d_w2, mlp_b2=d_b2,
        w_out=d_w_out, b_out=d_b_out,
        levels=d_levels, query_source=d_source, learnable_query=d_learnable,
    )


# --- reference baselines -----------------------------------------------------

@dataclass(frozen=True)
class MlpHead:
    """Two-layer GELU MLP shared by the pooling and per-token baselines."""

    w1: Array  # (C, D)
    b1: Array
    w2: Array  # (D, D)
    b2: Array


def init_mlp_head(channels: int, out_dim: int, rng: Rng) -> MlpHead:
    return MlpHead(
        w1=init_uniform(rng, (channels, out_dim), channels, out_dim),
        b1=np.zeros(out_dim),
        w2=init_uniform(rng, (out_dim, out_dim), out_dim, out_dim),
        b2=np.zeros(out_dim),
    )


def apply_mlp_head(head: MlpHead, x: Array) -> Array:
    return matmul(gelu(matmul(x, head.w1) + head.b1), head.w2) + head.b2


def block_mean(grid: Array, scale: int) -> Array:
    """Mean over each scale x scale block, flattened row-major to (M, C)."""
    return build_point_region_pairs(grid, scale).mean(axis=1)


def baseline_avgpool(cfg: ProjectorConfig, head: MlpHead, last_level: Array) -> Array:
    """Block-mean pooling followed by the MLP head: (M, out_dim)."""
    return apply_mlp_head(head, block_mean(last_level, cfg.scale))


def baseline_mlp(cfg: ProjectorConfig, head: MlpHead, last_level: Array) -> Array:
    """Per-token MLP, token count unchanged: (N, out_dim)."""
    n = cfg.grid_h * cfg.grid_w
    return apply_mlp_head(head, as_tensor(last_level).reshape(n, cfg.channels))


def baseline_pixelshuffle(cfg: ProjectorConfig, last_level: Array) -> Array:
    """Lossless space-to-channel rearrangement: (M, scale^2 * C)."""
    pairs = build_point_region_pairs(last_level, cfg.scale)
    return pairs.reshape(cfg.tokens, cfg.region_cells * cfg.channels)


def pixelshuffle_inverse(cfg: ProjectorConfig, tokens: Array) -> Array:
    """Exact inverse of ``baseline_pixelshuffle``."""
    pairs = as_tensor(tokens).reshape(cfg.tokens, cfg.region_cells, cfg.channels)
    return point_region_pairs_inverse(pairs, cfg.grid_h, cfg.grid_w)
