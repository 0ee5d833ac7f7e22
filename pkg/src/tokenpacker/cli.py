"""Command-line surface: grid planning, projection, pipeline, checks, costs.

Exit codes: 0 success, 1 check failure, 2 usage error, 3 data/shape error.
Every command is deterministic given its flags and seeds. The only honored
environment variable is THREADS, which lets the pipeline project patches
concurrently (results are bitwise-identical to sequential execution).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import fileio, layout, projector, slicer
from .gradcheck import TOLERANCE, run_gradcheck
from .projector import ConfigError, LevelFeatures, ProjectorConfig
from .tensor import Rng, ShapeError

PROJECTOR_CHOICES = ("tokenpacker", "avgpool", "pixelshuffle", "mlp")


@dataclasses.dataclass(frozen=True)
class CostRow:
    """One benchmark configuration in a CostReport."""

    projector: str
    scale: int
    tokens_visual: int
    tokens_separator: int
    compression_ratio: float  # 1 - visual / visual_of_mlp_baseline
    cost_proxy: float  # (visual + separators + text_tokens) ** 2
    rel_cost: float
    forward_ms: float


def cost_proxy(visual: int, separators: int, text_tokens: int) -> float:
    """Quadratic sequence-cost stand-in: (T_v + T_t)^2 in dimensionless units."""
    return float(visual + separators + text_tokens) ** 2


def _emit(doc: dict) -> None:
    print(json.dumps(doc, indent=2))


def _positive_extent(parser: argparse.ArgumentParser, height: int, width: int) -> None:
    if height < 1 or width < 1:
        parser.error(f"image extent must be positive, got {height}x{width}")


# --- plan-grid ----------------------------------------------------------------

def cmd_plan_grid(parser, args) -> int:
    _positive_extent(parser, args.height, args.width)
    plan = slicer.make_slice_plan(args.height, args.width, args.cell_size, args.max_grids, args.beta)
    doc = plan.to_json()
    if args.all_scores:
        doc["candidates"] = [
            {
                "grid": {"rows": g.rows, "cols": g.cols},
                **dataclasses.asdict(
                    slicer.score_grid(args.height, args.width, args.cell_size, g.rows, g.cols, args.beta)
                ),
            }
            for g in slicer.enumerate_grids(args.max_grids)
        ]
    _emit(doc)
    return 0


# --- project -------------------------------------------------------------------

def cmd_project(parser, args) -> int:
    cfg = fileio.load_config(args.config)
    level_paths = [p for p in args.features.split(",") if p]
    levels = tuple(fileio.load_tensor(p) for p in level_paths)
    query_source = fileio.load_tensor(args.query_source)
    feats = LevelFeatures(levels=levels, query_source=query_source)
    weights = fileio.load_weights(args.weights, cfg)
    tokens = projector.forward(cfg, weights, feats)
    fileio.save_tensor(args.out, tokens)
    _emit({"tokens": int(tokens.shape[0]), "dims": int(tokens.shape[1])})
    return 0


# --- pipeline ------------------------------------------------------------------

def _project_block(cfg, weights, seed_base: int, block_index: int):
    feats = fileio.synth_features(
        seed_base + block_index * (cfg.levels + 1),
        cfg.grid_h, cfg.grid_w, cfg.channels, cfg.levels,
    )
    return projector.forward(cfg, weights, feats)


def run_pipeline(
    height: int,
    width: int,
    scale: int,
    seed: int,
    max_grids: int = 9,
    cell_size: int = 336,
    beta: float = 0.1,
    channels: int = 64,
    levels: int = 4,
    out_dim: int = 64,
    threads: int = 1,
) -> tuple[slicer.SlicePlan, layout.TokenSequence]:
    """Plan the grid, synthesize and project every block, assemble the sequence.

    Block b (overview first, then patches row-major) draws its features from
    seed + b * (levels + 1), so the overview and every patch get disjoint
    deterministic streams.
    """
    plan = slicer.make_slice_plan(height, width, cell_size, max_grids, beta)
    feature_grid = cell_size // 14  # ViT patch size 14 per cell
    cfg = ProjectorConfig(
        channels=channels, grid_h=feature_grid, grid_w=feature_grid,
        scale=scale, out_dim=out_dim, levels=levels,
    )
    weights = projector.init_weights(cfg, Rng(seed))
    n_blocks = 1 + plan.grid.cells
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            blocks = list(pool.map(lambda b: _project_block(cfg, weights, seed, b), range(n_blocks)))
    else:
        blocks = [_project_block(cfg, weights, seed, b) for b in range(n_blocks)]
    patches = [
        [blocks[1 + r * plan.grid.cols + c] for c in range(plan.grid.cols)]
        for r in range(plan.grid.rows)
    ]
    return plan, layout.assemble(blocks[0], patches)


def cmd_pipeline(parser, args) -> int:
    _positive_extent(parser, args.height, args.width)
    threads = int(os.environ.get("THREADS", "1"))
    plan, seq = run_pipeline(
        args.height, args.width, args.scale, args.seed,
        max_grids=args.max_grids, cell_size=args.cell_size, beta=args.beta,
        channels=args.channels, levels=args.levels, out_dim=args.out_dim,
        threads=threads,
    )
    if args.out_dir:
        fileio.save_token_sequence(args.out_dir, seq)
    counts = layout.token_count(
        plan.grid.rows, plan.grid.cols,
        tokens_per_block=seq.elements[0].tokens.shape[0],
        with_overview=True,
    )
    seps = seq.separator_count()
    _emit({
        "grid": {"rows": plan.grid.rows, "cols": plan.grid.cols},
        "tokens_per_block": int(seq.elements[0].tokens.shape[0]),
        "visual": counts["visual"],
        "separators": counts["separators"],
        "commas": seps[layout.COMMA],
        "newlines": seps[layout.NEWLINE],
    })
    return 0


# --- gradcheck -----------------------------------------------------------------

def cmd_gradcheck(parser, args) -> int:
    cfg = ProjectorConfig(
        channels=args.channels, grid_h=args.grid, grid_w=args.grid,
        scale=args.scale, out_dim=args.channels, levels=args.levels,
    )
    result = run_gradcheck(
        cfg, seed=args.seed, eps=args.eps,
        corrupt_section="w_q" if args.corrupt_backward else None,
    )
    _emit({
        "tolerance": result.tolerance,
        "max_relative_error": result.errors,
        "passed": result.passed,
    })
    return 0 if result.passed else 1


# --- bench ---------------------------------------------------------------------

def _bench_grid(args) -> tuple[int, int, int] | None:
    """(rows, cols, cells) of the grid planned for --grid-plan, or None."""
    if args.grid_plan in (None, "", "none"):
        return None
    try:
        h, w = (int(p) for p in args.grid_plan.lower().split("x"))
    except ValueError:
        raise ValueError(f"--grid-plan expects HxW or 'none', got {args.grid_plan!r}")
    plan = slicer.make_slice_plan(h, w, max_cells=args.max_grids)
    return plan.grid.rows, plan.grid.cols, plan.grid.cells


def _timed(fn) -> tuple[float, np.ndarray]:
    start = time.perf_counter()
    out = fn()
    return (time.perf_counter() - start) * 1e3, out


def cmd_bench(parser, args) -> int:
    try:
        scales = [int(s) for s in args.scales.split(",") if s]
        grid = _bench_grid(args)
    except ValueError as exc:
        parser.error(str(exc))
    feature_grid = 24
    n_tokens = feature_grid * feature_grid
    seed = args.seed

    def block_multiplier() -> tuple[int, int, int]:
        if grid is None:
            return 1, 0, 0  # single image, no separators
        rows, cols, cells = grid
        counts = layout.token_count(rows, cols, 1, with_overview=True)
        commas = rows * (cols - 1)
        return counts["visual"], commas, counts["separators"] - commas

    blocks, commas, newlines = block_multiplier()
    separators = commas + newlines

    rows: list[CostRow] = []
    head_cfg = ProjectorConfig(
        channels=args.channels, grid_h=feature_grid, grid_w=feature_grid,
        scale=2, out_dim=args.out_dim,
    )
    head = projector.init_mlp_head(args.channels, args.out_dim, Rng(seed))
    feats = fileio.synth_features(seed + 1, feature_grid, feature_grid, args.channels, args.levels)
    mlp_visual = blocks * n_tokens
    ms, _ = _timed(lambda: projector.baseline_mlp(head_cfg, head, feats.levels[-1]))
    mlp_cost = cost_proxy(mlp_visual, separators, args.text_tokens)
    rows.append(CostRow(
        projector="mlp", scale=1,
        tokens_visual=mlp_visual, tokens_separator=separators,
        compression_ratio=0.0, cost_proxy=mlp_cost, rel_cost=1.0, forward_ms=ms,
    ))
    for s in scales:
        cfg = ProjectorConfig(
            channels=args.channels, grid_h=feature_grid, grid_w=feature_grid,
            scale=s, out_dim=args.out_dim, levels=args.levels,
        )
        weights = projector.init_weights(cfg, Rng(seed))
        ms, out = _timed(lambda: projector.forward(cfg, weights, feats))
        visual = blocks * cfg.tokens
        cost = cost_proxy(visual, separators, args.text_tokens)
        rows.append(CostRow(
            projector="tokenpacker", scale=s,
            tokens_visual=visual, tokens_separator=separators,
            compression_ratio=1.0 - visual / mlp_visual,
            cost_proxy=cost, rel_cost=cost / mlp_cost, forward_ms=ms,
        ))

    columns = [f.name for f in dataclasses.fields(CostRow)]
    if args.format in ("tsv", "both"):
        print("\t".join(columns))
        for row in rows:
            print("\t".join(_format_cell(getattr(row, c)) for c in columns))
    if args.format in ("json", "both"):
        if args.format == "both":
            print()
        _emit({
            "text_tokens": args.text_tokens,
            "grid": None if grid is None else {"rows": grid[0], "cols": grid[1]},
            "rows": [dataclasses.asdict(r) for r in rows],
        })
    return 0


def _format_cell(value) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


# --- compare -------------------------------------------------------------------

def cmd_compare(parser, args) -> int:
    feature_grid = args.grid
    cfg = ProjectorConfig(
        channels=args.channels, grid_h=feature_grid, grid_w=feature_grid,
        scale=args.scale, out_dim=args.out_dim, levels=args.levels,
    )
    feats = fileio.synth_features(args.seed + 1, feature_grid, feature_grid, args.channels, args.levels)
    last = feats.levels[-1]

    if args.projector == "tokenpacker":
        weights = projector.init_weights(cfg, Rng(args.seed))
        ms, out = _timed(lambda: projector.forward(cfg, weights, feats))
    elif args.projector == "avgpool":
        head = projector.init_mlp_head(args.channels, args.out_dim, Rng(args.seed))
        ms, out = _timed(lambda: projector.baseline_avgpool(cfg, head, last))
    elif args.projector == "pixelshuffle":
        ms, out = _timed(lambda: projector.baseline_pixelshuffle(cfg, last))
    else:
        head = projector.init_mlp_head(args.channels, args.out_dim, Rng(args.seed))
        ms, out = _timed(lambda: projector.baseline_mlp(cfg, head, last))

    norms = np.sqrt(np.sum(out * out, axis=1))
    doc = {
        "projector": args.projector,
        "tokens": int(out.shape[0]),
        "dims": int(out.shape[1]),
        "row_norm": {
            "mean": float(norms.mean()),
            "min": float(norms.min()),
            "max": float(norms.max()),
        },
        "forward_ms": ms,
    }
    if args.projector in ("tokenpacker", "avgpool"):
        doc["degeneracy_max_abs_delta"] = _degeneracy_delta(cfg, feats, args.seed)
    _emit(doc)
    return 0


def _degeneracy_delta(cfg, feats, seed) -> float:
    """Uniform-attention oracle: zero query weights must reduce the attention
    context to the value-projected block mean (average pooling)."""
    weights = projector.init_weights(cfg, Rng(seed))
    weights = dataclasses.replace(weights, w_q=np.zeros_like(weights.w_q))
    query = projector.make_query(cfg, weights, feats)
    regions = projector.build_point_region_pairs(projector.concat_levels(feats), cfg.scale)
    _, state = projector.inject(cfg, weights, query, regions, return_state=True)
    pooled = regions.mean(axis=1) @ weights.w_v
    return float(np.max(np.abs(state.context - pooled)))


# --- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tokenpacker",
        description="Visual token compression engine: grid planning, projection, cost reports.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan-grid", help="score grids and print the slice plan as JSON")
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--cell-size", type=int, default=336)
    p.add_argument("--max-grids", type=int, default=9)
    p.add_argument("--beta", type=float, default=0.1)
    p.add_argument("--all-scores", action="store_true", help="include every candidate's scores")
    p.set_defaults(fn=cmd_plan_grid)

    p = sub.add_parser("project", help="run the projector on stored feature files")
    p.add_argument("--features", required=True, help="comma-separated level tensors (.tpkf)")
    p.add_argument("--query-source", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_project)

    p = sub.add_parser("pipeline", help="plan, synthesize, project and assemble end to end")
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--scale", type=int, default=2)
    p.add_argument("--max-grids", type=int, default=9)
    p.add_argument("--beta", type=float, default=0.1)
    p.add_argument("--cell-size", type=int, default=336)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--channels", type=int, default=64)
    p.add_argument("--levels", type=int, default=4)
    p.add_argument("--out-dim", type=int, default=64)
    p.add_argument("--out-dir", default=None, help="write manifest.json and blocks.tpkf here")
    p.set_defaults(fn=cmd_pipeline)

    p = sub.add_parser("gradcheck", help="verify analytic gradients against finite differences")
    p.add_argument("--grid", type=int, default=4)
    p.add_argument("--channels", type=int, default=8)
    p.add_argument("--scale", type=int, default=2)
    p.add_argument("--levels", type=int, default=2)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--corrupt-backward", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("bench", help="token counts, compression ratios and cost proxies")
    p.add_argument("--scales", default="2,3,4")
    p.add_argument("--text-tokens", type=int, default=128)
    p.add_argument("--grid-plan", default="none", help="HxW image size to slice, or 'none'")
    p.add_argument("--max-grids", type=int, default=9)
    p.add_argument("--channels", type=int, default=64)
    p.add_argument("--out-dim", type=int, default=64)
    p.add_argument("--levels", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=("tsv", "json", "both"), default="both")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("compare", help="run one projector on shared synthetic features")
    p.add_argument("--projector", choices=PROJECTOR_CHOICES, required=True)
    p.add_argument("--grid", type=int, default=24)
    p.add_argument("--scale", type=int, default=2)
    p.add_argument("--channels", type=int, default=64)
    p.add_argument("--out-dim", type=int, default=64)
    p.add_argument("--levels", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_compare)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(parser, args)
    except (fileio.FileFormatError, ShapeError, ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
