import math

import numpy as np
import pytest

from bilevelsense.errors import InfeasibleError, UnsupportedDimensionError
from bilevelsense.model import BilevelProgram, Expr, eval_expr, parse_program
from bilevelsense.valuefn import (
    GridSpec,
    curve_to_csv,
    lower_solutions,
    lower_value,
    optimistic_solutions,
    optimistic_value,
    pessimistic_solutions,
    pessimistic_value,
    pessimistic_value_direct,
    sample_curve,
)

from conftest import brute_force_lower

GRID = GridSpec()
FINE = GridSpec(points_per_dim=201, refine_depth=5)


class TestLowerValue:
    def test_instance_a_halfpoint(self, prog_a):
        # brute-force oracle: S(x) = {x} for x >= 0, phi(0.5) = -0.5
        oracle_phi, *_ = brute_force_lower(prog_a, [0.5])
        assert oracle_phi == pytest.approx(-0.5, abs=1e-3)
        assert lower_value(prog_a, [0.5], GRID) == pytest.approx(-0.5, abs=1e-4)

    def test_constant_objective(self, prog_c):
        assert lower_value(prog_c, [0.7], GRID) == 0.0

    def test_infeasible(self):
        text = """
[dims]
n = 1
m = 1
[upper]
objective = x1
[lower]
objective = y1
constraint = y1 + 5
constraint = -5 - y1
[box]
x1 = -1, 1
y1 = -2, 2
[mode]
optimistic
"""
        prog = parse_program(text)
        with pytest.raises(InfeasibleError):
            lower_value(prog, [0.0], GRID)

    def test_x_outside_feasibility(self, prog_a):
        # K(x) empty for x < 0
        with pytest.raises(InfeasibleError):
            lower_value(prog_a, [-0.5], GRID)


class TestSolutions:
    def test_singleton_tracking(self, prog_a):
        sol = lower_solutions(prog_a, [0.5], GRID)
        assert len(sol) == 1
        assert sol.points[0][0] == pytest.approx(0.5, abs=sol.finest_cell)

    def test_flat_objective_covers_interval(self, prog_c):
        sol = lower_solutions(prog_c, [0.3], GRID)
        pts = sorted(p[0] for p in sol.points)
        assert pts[0] == pytest.approx(0.0, abs=1e-9)
        assert pts[-1] == pytest.approx(1.0, abs=1e-9)
        gaps = np.diff(pts)
        assert np.max(gaps) < 0.05

    def test_infeasible_raises(self, prog_a):
        with pytest.raises(InfeasibleError):
            lower_solutions(prog_a, [-1.0], GRID)


class TestTwoLevelValues:
    def test_instance_c_origin(self, prog_c):
        assert optimistic_value(prog_c, [0.0], GRID) == pytest.approx(0.0, abs=1e-12)
        assert pessimistic_value(prog_c, [0.0], GRID) == pytest.approx(0.0, abs=1e-12)

    def test_instance_c_at_one(self, prog_c):
        # S(1) = [0, 1]; extremes of y -> y
        assert optimistic_value(prog_c, [1.0], GRID) == pytest.approx(0.0, abs=1e-9)
        assert pessimistic_value(prog_c, [1.0], GRID) == pytest.approx(1.0, abs=1e-9)

    def test_instance_a_halfpoint(self, prog_a):
        # S singleton {0.5}: F = 0.25 + 0.25
        vo = optimistic_value(prog_a, [0.5], GRID)
        vp = pessimistic_value(prog_a, [0.5], GRID)
        assert vo == pytest.approx(0.5, abs=1e-4)
        assert vp == pytest.approx(0.5, abs=1e-4)

    def test_sign_identity_exact(self, prog_a, prog_b, prog_c):
        for prog, xs in (
            (prog_a, np.linspace(0.0, 1.0, 11)),
            (prog_b, np.linspace(-1.0, 1.0, 11)),
            (prog_c, np.linspace(-1.0, 1.0, 11)),
        ):
            negp = prog.negated_upper()
            for x in xs:
                vp = pessimistic_value(prog, [x], GRID)
                vo_neg = optimistic_value(negp, [x], GRID)
                assert abs(vp + vo_neg) <= 1e-12
                assert abs(vp - pessimistic_value_direct(prog, [x], GRID)) <= 1e-12

    def test_solution_set_extremes(self, prog_c):
        so = optimistic_solutions(prog_c, [1.0], GRID)
        sp = pessimistic_solutions(prog_c, [1.0], GRID)
        assert [p[0] for p in so.points] == pytest.approx([0.0], abs=1e-9)
        assert [p[0] for p in sp.points] == pytest.approx([1.0], abs=1e-9)
        assert sp.value == pytest.approx(1.0, abs=1e-9)

    def test_singleton_s_collapses(self, prog_a):
        so = optimistic_solutions(prog_a, [0.5], GRID)
        sp = pessimistic_solutions(prog_a, [0.5], GRID)
        assert len(so) == len(sp) == 1
        assert so.points[0][0] == pytest.approx(sp.points[0][0], abs=1e-12)


class TestInvariants:
    def test_sandwich(self, prog_c):
        for x in np.linspace(-1, 1, 7):
            vo = optimistic_value(prog_c, [x], GRID)
            vp = pessimistic_value(prog_c, [x], GRID)
            sol = lower_solutions(prog_c, [x], GRID)
            for p in sol.arrays():
                Fv = eval_expr(prog_c.F, [x], list(p))
                assert vo - 1e-9 <= Fv <= vp + 1e-9

    def test_phi_lower_bounds_f(self, prog_a):
        phi = lower_value(prog_a, [0.8], GRID)
        sol = lower_solutions(prog_a, [0.8], GRID)
        for p in sol.arrays():
            fv = eval_expr(prog_a.f, [0.8], list(p))
            assert phi <= fv + sol.tol_val

    def test_refinement_monotonicity(self, prog_a, prog_c):
        # phi always improves with depth; the two-level values are
        # monotone wherever the optimality band is depth-stable (flat f,
        # or S pinned on the coarse lattice).
        for prog, x in ((prog_a, [0.37]), (prog_c, [0.61])):
            shallow = GridSpec(points_per_dim=101, refine_depth=0)
            deep = GridSpec(points_per_dim=101, refine_depth=3)
            assert lower_value(prog, x, deep) <= lower_value(prog, x, shallow) + 1e-12
        for depth_a, depth_b in ((0, 1), (1, 3)):
            ga = GridSpec(points_per_dim=201, refine_depth=depth_a)
            gb = GridSpec(points_per_dim=201, refine_depth=depth_b)
            assert optimistic_value(prog_c, [0.61], gb) <= optimistic_value(prog_c, [0.61], ga) + 1e-12
            assert pessimistic_value(prog_c, [0.61], gb) >= pessimistic_value(prog_c, [0.61], ga) - 1e-12
            assert optimistic_value(prog_a, [0.5], gb) <= optimistic_value(prog_a, [0.5], ga) + 1e-12
            assert pessimistic_value(prog_a, [0.5], gb) >= pessimistic_value(prog_a, [0.5], ga) - 1e-12


class TestCurves:
    def test_pessimistic_curve_matches_positive_part(self, prog_c):
        rows = sample_curve(prog_c, "phi_p", GRID, x_range=(-1.0, 1.0, 21))
        cell = 2.0 * GRID.coarse_cell(prog_c.box_y)
        for row in rows:
            assert row.status == "ok"
            assert row.value == pytest.approx(max(row.x[0], 0.0), abs=cell)

    def test_optimistic_curve_closed_form(self, prog_a):
        rows = sample_curve(prog_a, "phi_o", GRID, x_range=(0.0, 1.0, 21))
        for row in rows:
            x = row.x[0]
            assert row.value == pytest.approx((x - 1) ** 2 + x**2, abs=1e-4)

    def test_constant_objective_curves(self):
        text = INSTANCE_CONST
        prog = parse_program(text)
        rows_o = sample_curve(prog, "phi_o", GRID, x_range=(-1, 1, 5))
        rows_p = sample_curve(prog, "phi_p", GRID, x_range=(-1, 1, 5))
        for ro, rp in zip(rows_o, rows_p):
            assert ro.value == pytest.approx(3.0, abs=1e-12)
            assert rp.value == pytest.approx(3.0, abs=1e-12)

    def test_infeasible_rows_flagged(self, prog_a):
        rows = sample_curve(prog_a, "phi", GRID, x_range=(-0.5, 0.5, 5))
        statuses = [r.status for r in rows]
        assert "infeasible" in statuses and "ok" in statuses

    def test_csv_format(self, prog_c):
        rows = sample_curve(prog_c, "phi_p", GRID, x_range=(0.0, 1.0, 3))
        text = curve_to_csv(rows, prog_c.n)
        lines = text.strip().splitlines()
        assert lines[0] == "x1,value,status"
        assert len(lines) == 4
        first = lines[1].split(",")
        assert float(first[0]) == 0.0 and first[2] == "ok"

    def test_dimension_guard(self):
        prog = BilevelProgram(
            n=3, m=1,
            F=Expr.x(1), f=Expr.y(1),
            box_x=((-1, 1),) * 3, box_y=((-1, 1),),
        )
        with pytest.raises(UnsupportedDimensionError):
            sample_curve(prog, "phi")

    def test_collinearity_on_affine_instance(self):
        # piecewise linearity of phi for all-affine data: three-point test
        # away from breakpoints
        from instances import make_affine_instance

        prog = make_affine_instance(11)
        rows = sample_curve(prog, "phi", FINE, x_range=(-0.9, 0.9, 31))
        vals = [r.value for r in rows]
        for i in range(1, len(vals) - 1):
            mid_dev = abs(vals[i] - 0.5 * (vals[i - 1] + vals[i + 1]))
            assert mid_dev <= 1e-6


INSTANCE_CONST = """
[dims]
n = 1
m = 1
[upper]
objective = 3
[lower]
objective = 0
constraint = -y1
constraint = y1 - 1
[box]
x1 = -1, 1
y1 = -2, 2
[mode]
optimistic
"""
