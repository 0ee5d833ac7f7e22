import json
import random
from fractions import Fraction

import pytest

from tokenpacker.slicer import (
    GridSpec,
    baseline_fixed_split,
    enumerate_grids,
    make_slice_plan,
    overlap_score,
    padding_score,
    score_grid,
    select_grid,
)


class TestEnumerateGrids:
    def test_single_cell(self):
        assert enumerate_grids(1) == [GridSpec(1, 1)]

    def test_four_cells(self):
        got = [(g.rows, g.cols) for g in enumerate_grids(4)]
        assert got == [(1, 1), (1, 2), (1, 3), (1, 4), (2, 1), (2, 2), (3, 1), (4, 1)]

    @pytest.mark.parametrize("max_cells", [9, 16])
    def test_supported_budgets(self, max_cells):
        grids = enumerate_grids(max_cells)
        assert all(g.cells <= max_cells for g in grids)
        assert GridSpec(1, max_cells) in grids
        assert GridSpec(max_cells, 1) in grids


class TestPaddingScore:
    def test_exact_fit(self):
        s = score_grid(672, 336, 336, 2, 1, 0.1)
        assert s.alpha == 1.0
        assert s.padding_score == 1.0

    def test_equal_aspect_fills_canvas(self):
        s = score_grid(500, 500, 336, 2, 2, 0.1)
        assert s.alpha == pytest.approx(1.344)
        assert s.padding_score == pytest.approx(1.0, abs=1e-12)

    def test_hand_arithmetic(self):
        # alpha = 1008/1000, score = 508032/677376 = 3/4
        assert padding_score(1000, 500, 336, 3, 2) == pytest.approx(0.75, abs=1e-12)

    def test_in_unit_interval(self):
        rng = random.Random(0)
        for _ in range(500):
            h, w = rng.randint(32, 4096), rng.randint(32, 4096)
            rows, cols = rng.randint(1, 4), rng.randint(1, 4)
            sp = padding_score(h, w, 336, rows, cols)
            assert 0.0 < sp <= 1.0 + 1e-12

    def test_unit_iff_aspect_ratios_match(self):
        rng = random.Random(1)
        for _ in range(200):
            rows, cols = rng.randint(1, 4), rng.randint(1, 4)
            k = rng.randint(1, 7)
            s = score_grid(rows * k, cols * k, 336, rows, cols, 0.1)  # alpha_h == alpha_w
            assert s.padding_score == pytest.approx(1.0, abs=1e-12)
            skew = score_grid(rows * k + 1, cols * k, 336, rows, cols, 0.1)
            if skew.alpha_h != skew.alpha_w:
                assert skew.padding_score < 1.0


class TestOverlapScore:
    def test_identical_rectangles(self):
        assert overlap_score(672, 336, 336, 2, 1) == 1.0

    def test_quarter_overlap(self):
        assert overlap_score(1344, 1344, 336, 2, 2) == pytest.approx(0.25)

    def test_hand_arithmetic(self):
        assert overlap_score(1000, 500, 336, 3, 2) == pytest.approx(500000 / 677376, abs=1e-15)

    def test_unit_iff_exact_canvas(self):
        assert overlap_score(1008, 672, 336, 3, 2) == 1.0
        assert overlap_score(1009, 672, 336, 3, 2) < 1.0


class TestSelectGrid:
    def test_single_cell_exact_fit(self):
        grid, score = select_grid(336, 336, 336, 9, 0.1)
        assert (grid.rows, grid.cols) == (1, 1)
        assert score.total == pytest.approx(1.1, abs=1e-12)

    def test_two_one_exact_fit(self):
        grid, score = select_grid(672, 336, 336, 9, 0.1)
        assert (grid.rows, grid.cols) == (2, 1)
        assert score.padding_score == pytest.approx(1.0, abs=1e-12)
        assert score.overlap_score == pytest.approx(1.0, abs=1e-12)

    def test_big_square_picks_4x4(self):
        grid, score = select_grid(1344, 1344, 336, 16, 0.1)
        assert (grid.rows, grid.cols) == (4, 4)
        assert score.total == pytest.approx(1.1, abs=1e-12)

    @pytest.mark.parametrize("k", [1, 2, 3])
    def test_square_multiples_monotone(self, k):
        grid, _ = select_grid(336 * k, 336 * k, 336, 9, 0.1)
        assert (grid.rows, grid.cols) == (k, k)

    def test_matches_exact_rational_oracle(self):
        rng = random.Random(20240601)
        for _ in range(1500):
            h, w = rng.randint(32, 4096), rng.randint(32, 4096)
            max_cells = rng.choice((9, 16))
            got, _ = select_grid(h, w, 336, max_cells, 0.1)
            want = exhaustive_best_grid(h, w, 336, max_cells, Fraction(1, 10))
            assert (got.rows, got.cols) == want, (h, w, max_cells)


def exhaustive_best_grid(h, w, cell, max_cells, beta: Fraction) -> tuple[int, int]:
    """Independent scorer: exact rational arithmetic, brute-force enumeration.

    Same selection rule, different code path: max total score, ties to the
    grid with fewer cells, then fewer rows.
    """
    best = None
    for rows in range(1, max_cells + 1):
        for cols in range(1, max_cells + 1):
            if rows * cols > max_cells:
                continue
            ah = Fraction(rows * cell, h)
            aw = Fraction(cols * cell, w)
            alpha = ah if ah <= aw else aw
            pad = Fraction(h * w) * alpha * alpha / Fraction(rows * cols * cell * cell)
            inter = min(h, rows * cell) * min(w, cols * cell)
            union = h * w + rows * cols * cell * cell - inter
            total = pad + beta * Fraction(inter, union)
            key = (-total, rows * cols, rows)
            if best is None or key < best[0]:
                best = (key, (rows, cols))
    return best[1]


class TestSlicePlan:
    def test_exact_fit_no_padding(self):
        plan = make_slice_plan(1344, 1344, 336, 16, 0.1)
        assert (plan.grid.rows, plan.grid.cols) == (4, 4)
        assert plan.pad_bottom == 0 and plan.pad_right == 0
        assert len(plan.patches) == 16

    def test_canvas_identity(self):
        plan = make_slice_plan(1000, 500)
        assert plan.resized_h + plan.pad_bottom == plan.grid.rows * 336
        assert plan.resized_w + plan.pad_right == plan.grid.cols * 336

    def test_patches_tile_canvas_disjointly(self):
        for h, w, n in [(1000, 500, 9), (5376, 336, 16), (640, 1920, 9)]:
            plan = make_slice_plan(h, w, 336, n, 0.1)
            assert plan.grid.cells <= n
            covered = set()
            for p in plan.patches:
                assert p.w == 336 and p.h == 336
                cells = {(p.y + dy, p.x + dx) for dy in (0, 335) for dx in (0, 335)}
                assert not (cells & covered)
                covered |= cells
                assert 0 <= p.x and p.x + p.w <= plan.canvas_w
                assert 0 <= p.y and p.y + p.h <= plan.canvas_h
            assert len(plan.patches) == plan.grid.cells
            assert plan.resized_h <= plan.canvas_h and plan.resized_w <= plan.canvas_w

    def test_extreme_ratio_is_valid(self):
        plan = make_slice_plan(5376, 336, 336, 16, 0.1)
        assert plan.grid.cells <= 16
        assert plan.grid.cols == 1  # extreme tall strip keeps a single column

    def test_overview_fits_one_cell(self):
        plan = make_slice_plan(1000, 500)
        ov = plan.overview
        assert ov.resized_h + ov.pad_bottom == 336
        assert ov.resized_w + ov.pad_right == 336
        assert ov.resized_h == 336  # tall image fills the height

    def test_degenerate_extent_rejected(self):
        with pytest.raises(ValueError):
            make_slice_plan(0, 500)

    def test_json_schema(self):
        doc = make_slice_plan(1000, 500).to_json()
        assert set(doc) == {"grid", "alpha", "resized", "pad", "patches", "overview", "params"}
        assert set(doc["grid"]) == {"rows", "cols"}
        assert set(doc["resized"]) == {"h", "w"}
        assert set(doc["pad"]) == {"bottom", "right"}
        assert all(set(p) == {"x", "y", "w", "h"} for p in doc["patches"])
        assert set(doc["params"]) == {"r", "beta", "max_grids"}
        json.dumps(doc)  # must be serializable as-is


class TestFixedSplitBaseline:
    def test_always_2x2_672(self):
        for h, w in [(100, 4000), (672, 672), (1344, 1344)]:
            plan = baseline_fixed_split(h, w)
            assert (plan.grid.rows, plan.grid.cols) == (2, 2)
            assert (plan.canvas_h, plan.canvas_w) == (672, 672)
            assert plan.resized_h == 672 and plan.resized_w == 672
            assert len(plan.patches) == 4

    def test_square_input_distortion_free(self):
        plan = baseline_fixed_split(672, 672)
        assert plan.alpha_h == 1.0 and plan.alpha_w == 1.0

    def test_distortion_recorded(self):
        plan = baseline_fixed_split(1344, 672)
        assert plan.alpha_h == 0.5 and plan.alpha_w == 1.0
        doc = plan.to_json()
        assert doc["alpha_h"] == 0.5 and doc["alpha_w"] == 1.0
