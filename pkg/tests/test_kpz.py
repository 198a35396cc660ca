import math

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.integrate import quad

from core.clusters import optimal_deviation
from core.errors import ValidationError
from core.kpz import (
    ShapeFunction, build_hf, concavity, duality_check, hopf_lax_evolve, hopf_lax_line,
    i_kpz, i_kpz_gradient, intermediate_decomposition, invert_gradient, legendre_g,
    legendre_g_rate, parabola, shock_fan,
)


def quadrature_i_kpz(shape: ShapeFunction) -> float:
    cuts = sorted({p.a for p in shape.pieces} | {p.bx for p in shape.pieces})

    def integrand(x):
        return 0.5 * (shape.slope(x) ** 2 - (x / shape.t) ** 2)

    total = 0.0
    for a, b in zip(cuts[:-1], cuts[1:]):
        total += quad(integrand, a, b, epsabs=1e-13, epsrel=1e-12)[0]
    return total


def random_instance(rng, n, spread=2.0):
    x = np.sort(rng.uniform(-spread, spread, size=n)) + np.arange(n) * 0.05
    m = rng.uniform(0.2, 2.0, size=n)
    return x, m


class TestBuildShape:
    def test_tent(self):
        shape = build_hf(1.0, [0.0], [0.5])
        assert_allclose(shape.value([-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0]),
                        [-2.0, -0.5, 0.0, 0.5, 0.0, -0.5, -2.0])
        assert shape.support() == (-1.0, 1.0)
        assert_allclose(shape.left_slopes, [1.0])
        assert_allclose(shape.right_slopes, [-1.0])

    def test_node_on_parabola(self):
        shape = build_hf(2.0, [1.0], [float(parabola(2.0, 1.0))])
        xs = np.linspace(-3, 3, 13)
        assert_allclose(shape.value(xs), parabola(2.0, xs), atol=1e-14)
        assert_allclose(i_kpz_gradient(2.0, [1.0], [float(parabola(2.0, 1.0))]), [0.0], atol=1e-12)

    def test_chord_between_high_nodes(self):
        shape = build_hf(1.0, [-1.0, 1.0], [1.0, 1.0])
        assert len(shape.branches) == 1
        assert_allclose(shape.value([-1.0, 0.0, 0.5, 1.0]), 1.0)
        assert shape.slope(0.0) == 0.0
        y = -1.0 - math.sqrt(3.0)
        assert shape.value(y) == pytest.approx(float(parabola(1.0, y)))
        assert shape.slope(y - 0.1) == pytest.approx((y - 0.1) * -1.0)

    def test_low_nodes_get_separate_branches(self):
        shape = build_hf(1.0, [-2.0, 2.0], [-1.5, -1.5])
        assert len(shape.branches) == 2
        assert shape.value(0.0) == pytest.approx(0.0)

    def test_shape_is_continuous_and_above_parabola(self, rng):
        for _ in range(20):
            n = int(rng.integers(1, 5))
            x = np.sort(rng.uniform(-2, 2, size=n)) + np.arange(n) * 0.05
            h = parabola(1.5, x) + rng.uniform(0.0, 1.5, size=n)
            shape = build_hf(1.5, x, h)
            assert_allclose(shape.value(x), h, atol=1e-12)
            xs = np.linspace(-6, 6, 2001)
            assert np.all(shape.value(xs) >= parabola(1.5, xs) - 1e-12)
            linear = [p for p in shape.pieces if p.kind == "linear"]
            for p, q in zip(linear[:-1], linear[1:]):
                if p.bx == q.a:
                    assert p.u * p.bx + p.b == pytest.approx(q.u * q.a + q.b, abs=1e-10)

    def test_below_parabola_rejected(self):
        with pytest.raises(ValidationError):
            build_hf(1.0, [0.0], [-1.0])

    @pytest.mark.parametrize("t, x, h", [(0.0, [0.0], [1.0]), (1.0, [1.0, 0.0], [1.0, 1.0]), (1.0, [], [])])
    def test_invalid_nodes(self, t, x, h):
        with pytest.raises(ValidationError):
            build_hf(t, x, h)

    def test_json(self):
        shape = build_hf(1.0, [-1.0, 0.5], [0.3, 0.1])
        again = ShapeFunction.from_json(shape.to_json())
        xs = np.linspace(-4, 4, 41)
        assert_allclose(again.value(xs), shape.value(xs))
        assert again.concave == shape.concave

    def test_concavity_flags(self):
        assert concavity(1.0, [0.0], [0.5]) == (True, False)
        assert concavity(1.0, [0.0], [0.0]) == (True, True)
        # middle node sunk below the chord of its neighbours
        concave, _ = concavity(1.0, [-1.0, 0.0, 1.0], [2.0, 0.5, 2.0])
        assert not concave


class TestIkpz:
    def test_parabola_costs_nothing(self):
        assert i_kpz(build_hf(1.0, [0.3], [float(parabola(1.0, 0.3))])) == pytest.approx(0.0, abs=1e-14)

    @pytest.mark.parametrize("t, expected", [(1.0, 2 / 3), (4.0, 1 / 3)])
    def test_tent(self, t, expected):
        assert i_kpz(build_hf(t, [0.0], [0.5])) == pytest.approx(expected)

    def test_tent_closed_form(self):
        for h in (0.1, 0.5, 2.0):
            assert i_kpz(build_hf(1.0, [0.0], [h])) == pytest.approx(4 * math.sqrt(2) / 3 * h ** 1.5)

    def test_against_quadrature(self, rng):
        for _ in range(10):
            n = int(rng.integers(1, 4))
            x = np.sort(rng.uniform(-2, 2, size=n)) + np.arange(n) * 0.05
            h = parabola(2.0, x) + rng.uniform(0.05, 1.0, size=n)
            shape = build_hf(2.0, x, h)
            assert i_kpz(shape) == pytest.approx(quadrature_i_kpz(shape), abs=1e-8)

    def test_gradient_of_tent(self):
        assert_allclose(i_kpz_gradient(1.0, [0.0], [0.5]), [2.0])
        for h in (0.2, 1.3):
            assert_allclose(i_kpz_gradient(1.0, [0.0], [h]), [2 * math.sqrt(2 * h)])

    def test_gradient_vanishes_on_parabola(self):
        x = np.array([-1.0, 0.2, 1.7])
        assert_allclose(i_kpz_gradient(1.0, x, parabola(1.0, x)), 0.0, atol=1e-12)

    def test_gradient_finite_difference(self):
        eps = 1e-5
        fd = (i_kpz(build_hf(1.0, [0.0], [0.5 + eps])) - i_kpz(build_hf(1.0, [0.0], [0.5 - eps]))) / (2 * eps)
        assert fd == pytest.approx(2.0, abs=1e-6)

    def test_gradient_finite_difference_random_interior(self, rng):
        eps = 1e-5
        for _ in range(100):
            n = int(rng.integers(1, 5))
            x, m = random_instance(rng, n)
            t = float(rng.uniform(0.5, 3.0))
            h = invert_gradient(t, x, m)
            grad = i_kpz_gradient(t, x, h)
            for c in range(n):
                step = np.zeros(n)
                step[c] = eps
                fd = (i_kpz(build_hf(t, x, h + step)) - i_kpz(build_hf(t, x, h - step))) / (2 * eps)
                assert abs(fd - grad[c]) <= 1e-6


class TestInvertGradient:
    def test_tent(self):
        assert_allclose(invert_gradient(1.0, [0.0], [2.0]), [0.5], atol=1e-10)

    def test_zero_drops(self):
        x = np.array([-1.0, 2.0])
        assert_allclose(invert_gradient(1.0, x, [0.0, 0.0]), parabola(1.0, x))

    def test_round_trip_pair(self):
        h = invert_gradient(1.0, [-1.0, 1.0], [1.0, 1.0])
        assert_allclose(i_kpz_gradient(1.0, [-1.0, 1.0], h), [1.0, 1.0], atol=1e-9)
        assert h[0] == pytest.approx(h[1])

    def test_round_trip_random(self, rng):
        for _ in range(30):
            n = int(rng.integers(1, 5))
            x, m = random_instance(rng, n)
            t = float(rng.uniform(0.5, 3.0))
            h = invert_gradient(t, x, m)
            assert_allclose(i_kpz_gradient(t, x, h), m, atol=1e-9)
            assert build_hf(t, x, h).concave

    def test_negative_drops_rejected(self):
        with pytest.raises(ValidationError):
            invert_gradient(1.0, [0.0], [-1.0])


class TestHopfLax:
    def test_line_rule(self):
        assert hopf_lax_line(1.0, 1.0, 1.0) == (1.0, 0.5)

    def test_zero_back_time_is_identity(self):
        shape = build_hf(1.0, [0.0], [0.5])
        assert hopf_lax_evolve(shape, 0.0) is shape

    def test_tent_half_way(self):
        evolved = hopf_lax_evolve(build_hf(1.0, [0.0], [0.5]), 0.5)
        assert evolved.t == 0.5
        assert evolved.value(0.0) == pytest.approx(0.25)
        assert evolved.value(-0.25) == pytest.approx(0.0)
        assert evolved.value(2.0) == pytest.approx(float(parabola(0.5, 2.0)))
        assert_allclose(evolved.nodes_x, [0.0], atol=1e-15)

    def test_against_brute_force_infimum(self, rng):
        grid = np.linspace(-8.0, 8.0, 2001)
        step = grid[1] - grid[0]
        xs = np.linspace(-2.0, 2.0, 201)
        for _ in range(20):
            x, m = random_instance(rng, int(rng.integers(1, 5)), spread=1.0)
            ys = np.union1d(grid, x)
            shape = build_hf(1.0, x, invert_gradient(1.0, x, m))
            f = shape.value(ys)
            # every minimiser y* = x - s·h'(y*) lies inside the grid
            for s in (0.1, 0.25, 0.4, 0.55, 0.7):
                brute = np.min((xs[:, None] - ys[None, :]) ** 2 / (2 * s) + f[None, :], axis=1)
                exact = hopf_lax_evolve(shape, s).value(xs)
                assert np.all(exact <= brute + 1e-12)
                assert np.all(brute - exact <= step ** 2 / s)

    def test_rejects_full_back_time_and_non_concave(self):
        shape = build_hf(1.0, [0.0], [0.5])
        with pytest.raises(ValidationError):
            hopf_lax_evolve(shape, 1.0)
        with pytest.raises(ValidationError):
            hopf_lax_evolve(shape, 1.5)
        bumpy = build_hf(1.0, [-1.0, 0.0, 1.0], [2.0, 0.5, 2.0])
        with pytest.raises(ValidationError):
            hopf_lax_evolve(bumpy, 0.5)


class TestShockFan:
    def test_single_stationary_shock(self):
        fan = shock_fan(1.0, [0.0], [0.5])
        assert_allclose(fan.sample([0.0, 0.5, 1.0])[:, 0], 0.0, atol=1e-15)

    def test_symmetric_pair_meets_at_origin(self):
        h = invert_gradient(1.0, [-1.0, 1.0], [3.0, 3.0])
        fan = shock_fan(1.0, [-1.0, 1.0], h)
        meet = 2.0 / 3.0
        assert fan.position(0, meet) == pytest.approx(0.0, abs=1e-8)
        assert fan.position(1, meet) == pytest.approx(0.0, abs=1e-8)
        assert fan.position(0, 0.9) == pytest.approx(fan.position(1, 0.9))

    def test_velocities_are_mean_slopes(self, rng):
        for _ in range(30):
            x, m = random_instance(rng, int(rng.integers(1, 5)))
            fan = shock_fan(1.0, x, invert_gradient(1.0, x, m))
            for c in range(fan.n):
                for s0, s1, u_minus, u_plus in fan.segments[c]:
                    # short segments amplify rounding in the difference quotient
                    if s1 - s0 < 0.05:
                        continue
                    speed = (fan.position(c, s1) - fan.position(c, s0)) / (s1 - s0)
                    expected = 0.5 * (u_minus + u_plus)
                    assert abs(speed - expected) <= 1e-12 * max(1.0, abs(expected))

    def test_shocks_follow_optimal_clusters(self, rng):
        for _ in range(100):
            x, m = random_instance(rng, int(rng.integers(1, 5)))
            t = float(rng.uniform(0.5, 2.0))
            fan = shock_fan(t, x, invert_gradient(t, x, m))
            dev, _ = optimal_deviation(x, m, 0.0, t)
            grid = np.linspace(0.0, t, 1000)
            assert np.max(np.abs(fan.sample(grid) - dev.sample(grid))) <= 1e-9

    def test_shocks_stay_in_their_cone(self, rng):
        x, m = random_instance(rng, 3)
        fan = shock_fan(1.0, x, invert_gradient(1.0, x, m))
        for members, (y_left, y_right) in zip(fan.branches, fan.cones):
            for s in np.linspace(0.0, 1.0, 11):
                scale = 1.0 - s
                for c in members:
                    assert y_left * scale - 1e-9 <= fan.position(c, s) <= y_right * scale + 1e-9

    def test_boundary_rejected(self):
        with pytest.raises(ValidationError):
            shock_fan(1.0, [0.0], [0.0])


class TestDuality:
    def test_tent(self):
        from_clusters, from_legendre = duality_check(1.0, [0.0], [2.0])
        assert from_clusters == pytest.approx(1 / 3)
        assert from_legendre == pytest.approx(1 / 3)

    @pytest.mark.parametrize("t, m", [(2.0, 1.0), (5.0, 0.7)])
    def test_single_cluster(self, t, m):
        from_clusters, from_legendre = duality_check(t, [0.0], [m])
        assert from_clusters == pytest.approx(t * m ** 3 / 24)
        assert from_legendre == pytest.approx(t * m ** 3 / 24)

    def test_random_instances(self, rng):
        for _ in range(200):
            n = int(rng.integers(1, 5))
            x, m = random_instance(rng, n)
            t = float(rng.uniform(0.2, 5.0))
            from_clusters, from_legendre = duality_check(t, x, m)
            assert abs(from_clusters - from_legendre) <= 1e-8 * max(1.0, abs(from_clusters))

    def test_zero_mass_nodes_dropped(self):
        assert duality_check(1.0, [-1.0, 0.0], [0.0, 2.0]) == pytest.approx(duality_check(1.0, [0.0], [2.0]))
        assert duality_check(1.0, [0.0], [0.0]) == (0.0, 0.0)


class TestIntermediateDecomposition:
    def test_single_cluster(self):
        report = intermediate_decomposition(4.0, [0.0], [1.0], 1.5)
        assert report.lhs == pytest.approx(4.0 / 24)
        assert report.first_leg == pytest.approx(1.5 / 24)
        assert report.second_leg[0] == pytest.approx(2.5 / 24)
        assert report.residual_split <= 1e-12

    @pytest.mark.parametrize("t_mid", [8.0, 3.0])
    def test_pair_before_and_after_merge(self, t_mid):
        report = intermediate_decomposition(10.0, [-1.0, 1.0], [0.5, 0.5], t_mid)
        assert len(report.groups) == (2 if t_mid > 6.0 else 1)
        assert report.residual_split <= 1e-9
        assert report.residual_gradient <= 1e-9
        assert report.lhs == pytest.approx(1 / 6)

    def test_random_instances(self, rng):
        before, after = 0, 0
        for k in range(50):
            n = int(rng.integers(2, 5))
            x, m = random_instance(rng, n)
            t = float(rng.uniform(1.0, 5.0))
            _, tree = optimal_deviation(x, m, 0.0, t)
            merges = sorted(e.time for e in tree.events)
            # alternate between splitting before the first merge and after it
            if merges and k % 2 == 0:
                split = float(rng.uniform(0.1, 0.9)) * merges[0]
            elif merges:
                later = [s for s in merges if s > merges[0] * (1 + 1e-6)]
                hi = later[0] if later else t
                split = merges[0] + float(rng.uniform(0.1, 0.9)) * (hi - merges[0])
            else:
                split = float(rng.uniform(0.1, 0.9)) * t
            report = intermediate_decomposition(t, x, m, t - split)
            if len(report.groups) < n:
                after += 1
            else:
                before += 1
            assert report.residual_split <= 1e-9
            assert report.residual_gradient <= 1e-9
        assert before > 0 and after > 0

    def test_merge_instant_rejected(self):
        with pytest.raises(ValidationError):
            intermediate_decomposition(10.0, [-1.0, 1.0], [0.5, 0.5], 6.0)

    def test_report_json(self):
        data = intermediate_decomposition(10.0, [-1.0, 1.0], [0.5, 0.5], 8.0).to_json()
        assert data["groups"] == [[0], [1]]


class TestLegendreG:
    def test_equals_lyapunov_at_horizon(self):
        assert legendre_g(10.0, [-1.0, 1.0], [0.5, 0.5], 10.0) == pytest.approx(1 / 6)

    def test_derivative_matches_rate(self):
        x, m = [-1.0, 1.0], [0.5, 0.5]
        eps = 1e-3
        fd = (legendre_g(10.0, x, m, 7.0 + eps) - legendre_g(10.0, x, m, 7.0 - eps)) / (2 * eps)
        assert legendre_g_rate(10.0, x, m, 7.0) == pytest.approx(-1 / 48)
        assert fd == pytest.approx(-1 / 48, abs=1e-6)

    def test_matches_lyapunov_of_intermediate_clusters(self, rng):
        x, m = random_instance(rng, 3)
        report = intermediate_decomposition(2.0, x, m, 1.2)
        assert legendre_g(2.0, x, m, 1.2) == pytest.approx(report.first_leg, abs=1e-8)
