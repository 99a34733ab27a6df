import math
import random
from fractions import Fraction

import pytest

from gaugecalc import (
    Box,
    Gauge,
    IntervalFunction,
    PointFunction,
    TaggedPartition,
    cell_errors,
    cumulative,
    delta_variation_bruteforce,
    delta_variation_dp,
    delta_variation_dp_table,
    hk_integrate,
    indefinite_hk,
    pairwise_sum,
    riemann_sum,
    volume_power_cell_fn,
)
from gaugecalc.hk import table_to_csv_rows
from gaugecalc.intervals import dyadic_cells

from conftest import midpoint_oracle


LENGTH = IntervalFunction.length()


def tagged(pairs):
    return TaggedPartition(Box.unit(), [(Box.of(c), t) for c, t in pairs])


HALVES_LEFT = [((0, "1/2"), "0"), (("1/2", 1), "1/2")]
HALVES_CENTER = [((0, "1/2"), "1/4"), (("1/2", 1), "3/4")]


class TestRiemannSum:
    def test_constant_telescopes(self):
        assert riemann_sum("1", LENGTH, tagged(HALVES_CENTER)) == 1.0

    def test_left_tags(self):
        assert riemann_sum("x", LENGTH, tagged(HALVES_LEFT)) == 0.25

    def test_center_tags(self):
        assert riemann_sum("x", LENGTH, tagged(HALVES_CENTER)) == 0.5

    def test_additive_table_telescopes(self, rng):
        # invariant: sums of an additive interval function collapse to
        # the parent value under every refinement
        G = IntervalFunction.from_generator("x^2/3+x/5")
        from conftest import random_dyadic_partition

        for _ in range(8):
            part = random_dyadic_partition(Box.unit(), rng)
            tp = TaggedPartition(Box.unit(), [(c, c.center) for c in part])
            assert riemann_sum("1", G, tp) == pytest.approx(
                G.value(Box.unit()), abs=1e-12
            )

    def test_eval_error_reports_tag(self):
        from gaugecalc.hk import TagEvalError

        with pytest.raises(TagEvalError) as err:
            riemann_sum("1/x", LENGTH, tagged(HALVES_LEFT))
        assert "0.0" in str(err.value)


class TestHkIntegrate:
    def test_linear_exact(self):
        result = hk_integrate("2*x", LENGTH, Box.unit(), tol=1e-6)
        assert result.converged
        assert result.value == pytest.approx(1.0, abs=1e-6)

    def test_oscillating_derivative_matches_primitive_increment(self):
        F = PointFunction.builtin("hk_primitive")
        oracle = F((1,)) - F((0,))  # increment of the antiderivative
        result = hk_integrate("hk_derivative", LENGTH, Box.unit(), tol=1e-4)
        assert result.converged
        assert result.value == pytest.approx(oracle, abs=1e-4)
        assert result.evaluations <= 10**7

    def test_stieltjes_jump(self):
        G = IntervalFunction.heaviside("1/2")
        f = PointFunction.from_expr("x")
        oracle = f((0.5,)) * 1.0  # f continuous at the unit jump
        result = hk_integrate(f, G, Box.unit(), tol=1e-9)
        assert result.converged
        assert result.value == pytest.approx(oracle, abs=1e-9)

    def test_inv_sqrt(self):
        result = hk_integrate("inv_sqrt", LENGTH, Box.unit(), tol=1e-4)
        assert result.converged
        # oracle: increment of 2 sqrt(x)
        assert result.value == pytest.approx(2.0, abs=1e-4)

    def test_budget_exhaustion_flagged(self):
        result = hk_integrate("hk_derivative", LENGTH, Box.unit(), tol=1e-4,
                              budget=200)
        assert not result.converged
        assert result.evaluations >= 200

    def test_converged_error_estimate_below_tol(self):
        for tol in (1e-3, 1e-5):
            r = hk_integrate("sin(x)", LENGTH, Box.unit(), tol=tol)
            assert r.converged and r.error_estimate <= tol

    def test_self_consistency_tol_vs_tol_over_10(self):
        for f in ("exp(x)*sin(3*x)", "inv_sqrt"):
            t = 1e-4
            a = hk_integrate(f, LENGTH, Box.unit(), tol=t)
            b = hk_integrate(f, LENGTH, Box.unit(), tol=t / 10)
            assert a.converged and b.converged
            assert abs(a.value - b.value) <= 1.1 * t

    @pytest.mark.parametrize("expr", ["sin(x)", "exp(x)", "x^3-x/2+1/7"])
    def test_agrees_with_midpoint_oracle_on_smooth(self, expr):
        f = PointFunction.from_expr(expr)
        oracle = midpoint_oracle(lambda t: f((t,)), 0.0, 1.0)
        result = hk_integrate(f, LENGTH, Box.unit(), tol=1e-8)
        assert result.converged
        assert result.value == pytest.approx(oracle, abs=1e-8)

    def test_2d_volume(self):
        result = hk_integrate(
            PointFunction.from_expr("x1*x2", dim=2), None, Box.unit(2), tol=1e-8
        )
        assert result.converged
        assert result.value == pytest.approx(0.25, abs=1e-8)

    def test_result_json(self):
        import json

        r = hk_integrate("2*x", LENGTH, Box.unit(), tol=1e-6)
        data = json.loads(r.to_json())
        assert data["converged"] is True
        assert set(data) == {
            "value", "error_estimate", "evaluations", "max_depth", "converged"
        }

    def test_rejects_bad_tol(self):
        with pytest.raises(ValueError):
            hk_integrate("x", LENGTH, Box.unit(), tol=0.0)


class TestIndefinite:
    def test_constant_depth_1(self):
        table = indefinite_hk("1", LENGTH, Box.unit(), depth=1, tol=1e-9)
        assert table.value(Box.of((0, "1/2"))) == pytest.approx(0.5, abs=1e-9)
        assert table.value(Box.of(("1/2", 1))) == pytest.approx(0.5, abs=1e-9)
        assert table.value(Box.unit()) == pytest.approx(1.0, abs=1e-9)

    def test_2x_depth_1(self):
        table = indefinite_hk("2*x", LENGTH, Box.unit(), depth=1, tol=1e-9)
        assert table.value(Box.of((0, "1/2"))) == pytest.approx(0.25, abs=1e-9)
        assert table.value(Box.of(("1/2", 1))) == pytest.approx(0.75, abs=1e-9)

    def test_inv_sqrt_depth_0(self):
        table = indefinite_hk("inv_sqrt", LENGTH, Box.unit(), depth=0, tol=1e-4)
        assert table.value(Box.unit()) == pytest.approx(2.0, abs=1e-4)

    def test_parents_equal_children_sums_exactly(self):
        table = indefinite_hk("sin(x)", LENGTH, Box.unit(), depth=5, tol=1e-8)
        for d in range(5):
            for cell in dyadic_cells(Box.unit(), d):
                kids = cell.bisect()
                assert table.value(cell) == pytest.approx(
                    table.value(kids[0]) + table.value(kids[1]), abs=1e-12
                )

    def test_depth_cap(self):
        with pytest.raises(ValueError):
            indefinite_hk("x", LENGTH, Box.unit(), depth=25)

    def test_cumulative(self):
        table = indefinite_hk("2*x", LENGTH, Box.unit(), depth=4, tol=1e-10)
        F = cumulative(table, 0)
        assert F(Fraction(1, 2)) == pytest.approx(0.25, abs=1e-9)
        assert F(1) == pytest.approx(1.0, abs=1e-9)
        F_half = cumulative(table, Fraction(1, 2))
        assert F_half(Fraction(1, 4)) == pytest.approx(-0.1875, abs=1e-9)
        with pytest.raises(ValueError):
            F(0.3)  # not a grid point

    def test_csv_rows(self):
        table = indefinite_hk("1", LENGTH, Box.unit(), depth=1, tol=1e-9)
        rows = table_to_csv_rows(table)
        assert rows[0] == ["depth", "lo1", "hi1", "value"]
        assert rows[1] == ["0", "0", "1", "1.0"]
        assert rows[2][:3] == ["1", "0", "1/2"]


class TestCellErrors:
    def test_linear_has_zero_defect(self):
        errs = cell_errors("2*x", LENGTH, Box.unit(), 2)
        assert all(e.cauchy_defect == 0.0 for e in errs)

    def test_defects_nonnegative_and_largest_near_kink(self):
        errs = cell_errors("abs(x-1/3)", LENGTH, Box.unit(), 3)
        assert all(e.cauchy_defect >= 0.0 for e in errs)
        worst = max(errs, key=lambda e: e.cauchy_defect)
        lo, hi = worst.cell.intervals[0]
        assert lo <= Fraction(1, 3) <= hi


INF_GAUGE = Gauge.constant(math.inf)


class TestDeltaVariationBruteforce:
    def test_zero(self):
        psi = volume_power_cell_fn(0.0, 1)
        grid = [0, "1/2", 1]
        assert delta_variation_bruteforce(psi, Box.unit(), INF_GAUGE, grid) == 0.0

    def test_volume_telescopes(self):
        psi = volume_power_cell_fn(1.0, 1)
        grid = [0, "1/4", "1/2", "3/4", 1]
        assert delta_variation_bruteforce(psi, Box.unit(), INF_GAUGE, grid) == 1.0

    def test_squared_volume_prefers_coarse(self):
        psi = volume_power_cell_fn(1.0, 2)
        grid = [0, "1/2", 1]
        assert delta_variation_bruteforce(psi, Box.unit(), INF_GAUGE, grid) == 1.0

    def test_no_fine_configuration_sentinel(self):
        psi = volume_power_cell_fn(1.0, 1)
        tiny = Gauge.constant(1e-6)
        value = delta_variation_bruteforce(psi, Box.unit(), tiny, [0, "1/2", 1])
        assert value == -math.inf

    def test_tag_dependent(self):
        # Psi depends on the tag: only admissible tags may be used
        def psi(box, tag):
            return float(box.volume) * float(tag[0])

        grid = [0, "1/2", 1]
        value = delta_variation_bruteforce(psi, Box.unit(), INF_GAUGE, grid)
        assert value == 1.0  # whole box tagged at 1


class TestDeltaVariationDP:
    def test_zero(self):
        psi = volume_power_cell_fn(0.0, 2)
        assert delta_variation_dp(psi, Box.unit(), INF_GAUGE, 3) == 0.0

    def test_squared_volume_coarse_wins(self):
        psi = volume_power_cell_fn(1.0, 2)
        assert delta_variation_dp(psi, Box.unit(), INF_GAUGE, 3) == 1.0

    def test_agrees_with_bruteforce_on_dyadic_grids(self):
        rng = random.Random(4)
        for trial in range(12):
            m = rng.choice([1, 2])
            t = rng.randint(0, m)
            u = rng.uniform(0.01, 1.0)
            c = rng.uniform(0.1, 10.0)
            p = rng.choice([1, 2])
            delta = 2.0**-t + u * 2.0 ** -(m + 1)
            psi = volume_power_cell_fn(c, p)
            gauge = Gauge.constant(delta)
            grid = [Fraction(i, 2**m) for i in range(2**m + 1)]
            bf = delta_variation_bruteforce(psi, Box.unit(), gauge, grid)
            dp = delta_variation_dp(psi, Box.unit(), gauge, m)
            assert dp == bf

    def test_monotone_in_gauge(self):
        psi = volume_power_cell_fn(1.0, 2)
        small = delta_variation_dp(psi, Box.unit(), Gauge.constant(0.3), 4)
        large = delta_variation_dp(psi, Box.unit(), Gauge.constant(0.7), 4)
        assert small <= large
        expr_small = Gauge.from_function(lambda x: 0.1 + x / 8)
        expr_large = Gauge.from_function(lambda x: 0.2 + x / 4)
        assert delta_variation_dp(psi, Box.unit(), expr_small, 4) <= \
            delta_variation_dp(psi, Box.unit(), expr_large, 4)

    def test_table_superadditive(self):
        def psi(box, tag):
            return float(box.volume) ** 2 + 0.1 * float(tag[0])

        table = delta_variation_dp_table(psi, Box.unit(), Gauge.constant(0.4), 5)
        for cell, value in table.items():
            if value == -math.inf:
                continue
            kids = cell.bisect()
            if all(k in table for k in kids):
                ksum = sum(table[k] for k in kids)
                if ksum > -math.inf:
                    assert value >= ksum - 1e-12

    def test_works_in_2d(self):
        psi = volume_power_cell_fn(1.0, 2)
        value = delta_variation_dp(psi, Box.unit(2), Gauge.constant(3.0), 2)
        assert value == 1.0

    def test_ge_any_single_fine_configuration(self):
        psi = volume_power_cell_fn(2.0, 2)
        gauge = Gauge.constant(0.4)
        dp = delta_variation_dp(psi, Box.unit(), gauge, 3)
        # the uniform quarter partition with center tags is delta-fine
        cells = list(dyadic_cells(Box.unit(), 2))
        manual = sum(psi(c, c.center) for c in cells)
        assert dp >= manual - 1e-15


def test_pairwise_sum_matches_fsum():
    rng = random.Random(7)
    values = [rng.uniform(-1, 1) * 10**rng.randint(-8, 8) for _ in range(257)]
    assert pairwise_sum(values) == pytest.approx(math.fsum(values), rel=1e-12)
    assert pairwise_sum([]) == 0.0
    assert pairwise_sum([3.25]) == 3.25
