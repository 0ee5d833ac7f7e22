"""Dynamic aspect-ratio-preserving grid planning for arbitrary image sizes.

Given an H x W image and square cells of ``cell`` pixels, every grid with
rows * cols <= max_cells is scored by how well the aspect-preserving resize
fills the grid canvas (padding score) plus how closely the canvas resolution
matches the raw image (overlap score, weighted by beta). The winner defines
the resize-and-pad geometry; an aspect-preserving cell-sized overview
thumbnail is always planned alongside the patches.

Geometry conventions (the scoring formulas leave them open): the canvas IoU
uses corner-aligned rectangles, the resized image is anchored top-left with
zero-padding on the bottom/right, resized extents round half up, and
upscaling (ratio > 1) is allowed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class GridSpec:
    rows: int
    cols: int

    @property
    def cells(self) -> int:
        return self.rows * self.cols


@dataclass(frozen=True)
class GridScore:
    """Score breakdown for one candidate grid."""

    padding_score: float  # canvas fraction covered by the resized image, in (0, 1]
    overlap_score: float  # IoU of image extent vs canvas extent, in (0, 1]
    total: float  # padding_score + beta * overlap_score
    alpha: float  # min(alpha_h, alpha_w), the applied uniform resize ratio
    alpha_h: float
    alpha_w: float


@dataclass(frozen=True)
class PatchBox:
    """Axis-aligned cell rectangle in canvas pixels (x = left, y = top)."""

    x: int
    y: int
    w: int
    h: int


@dataclass(frozen=True)
class OverviewGeometry:
    """Aspect-preserving fit of the raw image into one cell."""

    alpha: float
    resized_h: int
    resized_w: int
    pad_bottom: int
    pad_right: int


@dataclass(frozen=True)
class SlicePlan:
    grid: GridSpec
    alpha: float
    alpha_h: float  # per-axis applied ratios; differ only for the fixed-split baseline
    alpha_w: float
    resized_h: int
    resized_w: int
    pad_bottom: int
    pad_right: int
    patches: tuple[PatchBox, ...]
    overview: OverviewGeometry
    cell: int
    beta: float
    max_cells: int

    @property
    def canvas_h(self) -> int:
        return self.grid.rows * self.cell

    @property
    def canvas_w(self) -> int:
        return self.grid.cols * self.cell

    def to_json(self) -> dict:
        doc = {
            "grid": {"rows": self.grid.rows, "cols": self.grid.cols},
            "alpha": self.alpha,
            "resized": {"h": self.resized_h, "w": self.resized_w},
            "pad": {"bottom": self.pad_bottom, "right": self.pad_right},
            "patches": [{"x": p.x, "y": p.y, "w": p.w, "h": p.h} for p in self.patches],
            "overview": {
                "alpha": self.overview.alpha,
                "resized": {"h": self.overview.resized_h, "w": self.overview.resized_w},
                "pad": {"bottom": self.overview.pad_bottom, "right": self.overview.pad_right},
            },
            "params": {"r": self.cell, "beta": self.beta, "max_grids": self.max_cells},
        }
        if self.alpha_h != self.alpha_w:  # fixed-split distortion, recorded per axis
            doc["alpha_h"] = self.alpha_h
            doc["alpha_w"] = self.alpha_w
        return doc


def _check_extent(height: int, width: int) -> None:
    if height < 1 or width < 1:
        raise ValueError(f"image extent must be positive, got {height}x{width}")


def enumerate_grids(max_cells: int) -> list[GridSpec]:
    """All grids with rows * cols <= max_cells, rows ascending then cols."""
    if max_cells < 1:
        raise ValueError("max_cells must be >= 1")
    return [
        GridSpec(rows, cols)
        for rows in range(1, max_cells + 1)
        for cols in range(1, max_cells // rows + 1)
    ]


def resize_ratios(height, width, cell, rows, cols) -> tuple[float, float, float]:
    """(alpha_h, alpha_w, alpha): canvas/image ratios per axis and their min."""
    alpha_h = rows * cell / height
    alpha_w = cols * cell / width
    return alpha_h, alpha_w, min(alpha_h, alpha_w)


def padding_score(height, width, cell, rows, cols) -> float:
    """Fraction of the rows x cols canvas covered by the alpha-resized image."""
    _, _, alpha = resize_ratios(height, width, cell, rows, cols)
    return height * width * alpha * alpha / (rows * cols * cell * cell)


def overlap_score(height, width, cell, rows, cols) -> float:
    """IoU of the corner-aligned image and canvas rectangles."""
    canvas_h, canvas_w = rows * cell, cols * cell
    inter = min(height, canvas_h) * min(width, canvas_w)
    union = height * width + canvas_h * canvas_w - inter
    return inter / union


def score_grid(height, width, cell, rows, cols, beta) -> GridScore:
    alpha_h, alpha_w, alpha = resize_ratios(height, width, cell, rows, cols)
    pad = height * width * alpha * alpha / (rows * cols * cell * cell)
    over = overlap_score(height, width, cell, rows, cols)
    return GridScore(
        padding_score=pad,
        overlap_score=over,
        total=pad + beta * over,
        alpha=alpha,
        alpha_h=alpha_h,
        alpha_w=alpha_w,
    )


def select_grid(
    height: int, width: int, cell: int = 336, max_cells: int = 9, beta: float = 0.1
) -> tuple[GridSpec, GridScore]:
    """Best-scoring grid; ties go to fewer cells, then fewer rows."""
    _check_extent(height, width)
    if cell < 1:
        raise ValueError("cell size must be positive")
    if beta < 0:
        raise ValueError("beta must be >= 0")
    best: tuple[GridSpec, GridScore] | None = None
    for grid in enumerate_grids(max_cells):
        cand = score_grid(height, width, cell, grid.rows, grid.cols, beta)
        if best is None:
            best = (grid, cand)
            continue
        held, held_score = best
        if cand.total > held_score.total or (
            cand.total == held_score.total
            and (grid.cells, grid.rows) < (held.cells, held.rows)
        ):
            best = (grid, cand)
    assert best is not None
    return best


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _fit(height: int, width: int, alpha_h: float, alpha_w: float, canvas_h: int, canvas_w: int):
    """Resize by the per-axis ratios, round half up, clamp into the canvas."""
    resized_h = min(_round_half_up(alpha_h * height), canvas_h)
    resized_w = min(_round_half_up(alpha_w * width), canvas_w)
    return resized_h, resized_w, canvas_h - resized_h, canvas_w - resized_w


def _overview_geometry(height: int, width: int, cell: int) -> OverviewGeometry:
    alpha = min(cell / height, cell / width)
    rh, rw, pb, pr = _fit(height, width, alpha, alpha, cell, cell)
    return OverviewGeometry(alpha=alpha, resized_h=rh, resized_w=rw, pad_bottom=pb, pad_right=pr)


def _patch_boxes(grid: GridSpec, cell: int) -> tuple[PatchBox, ...]:
    return tuple(
        PatchBox(x=col * cell, y=row * cell, w=cell, h=cell)
        for row in range(grid.rows)
        for col in range(grid.cols)
    )


def make_slice_plan(
    height: int, width: int, cell: int = 336, max_cells: int = 9, beta: float = 0.1
) -> SlicePlan:
    """Select the grid and lay out the resize/pad geometry plus patch boxes."""
    grid, score = select_grid(height, width, cell, max_cells, beta)
    canvas_h, canvas_w = grid.rows * cell, grid.cols * cell
    rh, rw, pb, pr = _fit(height, width, score.alpha, score.alpha, canvas_h, canvas_w)
    return SlicePlan(
        grid=grid,
        alpha=score.alpha,
        alpha_h=score.alpha,
        alpha_w=score.alpha,
        resized_h=rh,
        resized_w=rw,
        pad_bottom=pb,
        pad_right=pr,
        patches=_patch_boxes(grid, cell),
        overview=_overview_geometry(height, width, cell),
        cell=cell,
        beta=beta,
        max_cells=max_cells,
    )


def baseline_fixed_split(height: int, width: int, cell: int = 336) -> SlicePlan:
    """Non-adaptive comparison plan: force-resize onto a fixed 2x2 canvas.

    The resize ignores aspect ratio, so alpha_h and alpha_w are recorded
    separately and generally differ (distortion).
    """
    _check_extent(height, width)
    grid = GridSpec(2, 2)
    canvas = 2 * cell
    alpha_h, alpha_w = canvas / height, canvas / width
    return SlicePlan(
        grid=grid,
        alpha=min(alpha_h, alpha_w),
        alpha_h=alpha_h,
        alpha_w=alpha_w,
        resized_h=canvas,
        resized_w=canvas,
        pad_bottom=0,
        pad_right=0,
        patches=_patch_boxes(grid, cell),
        overview=_overview_geometry(height, width, cell),
        cell=cell,
        beta=0.0,
        max_cells=grid.cells,
    )
