import math

import numpy as np
import pytest

from fracstef.exceptions import ConfigurationError, ConvergenceError, DomainError, ValidationError
from fracstef.mbp import BoundaryTrajectory, SolutionField, StefanParams, cap_profile, scaled_cap_data
from fracstef.stefan import (
    SigmaFront,
    apply_P,
    dependence_tolerance,
    gronwall_bound,
    integral_condition_residual,
    monotone_dependence_check,
    solve_stefan,
)


def params(**kw):
    base = dict(order=0.75, b=1.0, M=1.0, T=0.5, n=65, dt=0.01)
    base.update(kw)
    return StefanParams(**base)


@pytest.fixture(scope="module")
def base_run():
    p = params()
    return p, solve_stefan(p, scaled_cap_data(p, 1.0))


def field_with_flux(p, front, flux):
    v = np.zeros((front.times.size, p.n))
    return SolutionField(p, front.trajectory, v, np.full(front.times.size, flux))


class TestFrontMap:
    def test_zero_flux_keeps_b(self):
        p = params(T=0.3, dt=0.01)
        front = SigmaFront.constant(p.b, p.times, p.M)
        np.testing.assert_array_equal(apply_P(front, field_with_flux(p, front, 0.0)).s, p.b)

    def test_steepest_flux(self):
        p = params(b=2.0, M=1.5, T=0.3, dt=0.01)
        front = SigmaFront.constant(p.b, p.times, p.M)
        out = apply_P(front, field_with_flux(p, front, -p.M / 2))
        np.testing.assert_allclose(out.s, np.sqrt(p.b**2 + p.M * p.b * p.times), rtol=1e-14)
        assert out.sdot.max() <= p.M

    def test_radicand(self):
        p = params(T=0.3, dt=0.01)
        front = SigmaFront.constant(p.b, p.times, p.M)
        with pytest.raises(DomainError):
            apply_P(front, field_with_flux(p, front, 100.0))

    def test_time_grid_mismatch(self):
        p = params(T=0.3, dt=0.01)
        front = SigmaFront.constant(p.b, p.times, p.M)
        other = SigmaFront.constant(p.b, np.linspace(0, 0.3, 5), p.M)
        with pytest.raises(ConfigurationError):
            apply_P(other, field_with_flux(p, front, 0.0))

    def test_sigma_rejects_steep_front(self):
        tr = BoundaryTrajectory.from_function(np.linspace(0, 1, 5), lambda t: 1 + 2 * t)
        with pytest.raises(ValidationError):
            SigmaFront(tr, 1.0)


class TestSolve:
    def test_zero_data(self):
        p = params()
        sol = solve_stefan(p, np.zeros(p.n))
        assert sol.iterations == 1
        assert np.all(sol.front.s == p.b)
        assert np.max(np.abs(sol.integral_residual)) == 0.0

    def test_base_run(self, base_run):
        p, sol = base_run
        s = sol.front.s
        assert np.all(np.diff(s) >= 0)
        assert p.b < s[-1] <= p.b + p.M * p.T
        assert sol.residual_history[-1] <= 1e-8 * p.b
        assert sol.iterations <= 50
        assert sol.diagnostics.passed, sol.diagnostics.failures()
        assert sol.integral_residual[0] == 0.0

    def test_front_solves_stefan_condition(self, base_run):
        p, sol = base_run
        t = sol.times
        # backward slope of the front against the trapezoid mean of -flux * s / s
        lhs = np.diff(sol.front.s**2) / 2
        rhs = -np.diff(t) * 0.5 * (sol.field.front_flux[1:] * sol.front.s[1:] + sol.field.front_flux[:-1] * sol.front.s[:-1])
        assert np.max(np.abs(lhs - rhs)) <= 1e-7

    def test_residual_refinement(self, base_run):
        p, coarse = base_run
        fine_p = p.replace(n=2 * p.n - 1, dt=p.dt / 2)
        fine = solve_stefan(fine_p, scaled_cap_data(fine_p, 1.0))
        ratio = np.max(np.abs(coarse.integral_residual)) / np.max(np.abs(fine.integral_residual))
        assert ratio >= 1.8

    def test_non_solution_detected(self, base_run):
        p, sol = base_run
        from fracstef.mbp import solve_mbp

        wrong = solve_mbp(p, BoundaryTrajectory.from_function(p.times, lambda t: 1 + t), scaled_cap_data(p, 1.0))
        r_wrong = np.max(np.abs(integral_condition_residual(wrong, scaled_cap_data(p, 1.0))))
        assert r_wrong > 100 * np.max(np.abs(sol.integral_residual))

    def test_cap_violation(self):
        p = params()
        with pytest.raises(ValidationError):
            solve_stefan(p, 2 * cap_profile(p).values * p.grid.nodes)

    def test_non_convergence_carries_history(self):
        p = params()
        with pytest.raises(ConvergenceError) as info:
            solve_stefan(p, scaled_cap_data(p, 1.0), max_iters=2)
        assert len(info.value.history) == 2

    @pytest.mark.parametrize(
        "kw", [dict(restart_fraction=0.0), dict(restart_fraction=1.5), dict(window_length=-1.0), dict(max_iters=0)]
    )
    def test_bad_controls(self, kw):
        p = params()
        with pytest.raises(ConfigurationError):
            solve_stefan(p, scaled_cap_data(p, 1.0), **kw)

    def test_windows_cover_long_horizon(self):
        p = params(T=1.5, dt=0.02, n=33)
        sol = solve_stefan(p, scaled_cap_data(p, 1.0))
        assert len(sol.windows) > 1
        assert sol.windows[0][0] == 0.0 and sol.windows[-1][1] == pytest.approx(p.T)
        assert sol.diagnostics.passed

    def test_continuation_agrees(self):
        p = params(T=0.5, dt=0.01, n=65)
        u0 = scaled_cap_data(p, 1.0)
        one = solve_stefan(p, u0, window_length=p.T)
        two = solve_stefan(p, u0, window_length=p.T / 2, restart_fraction=1.0)
        assert len(two.windows) == 2
        gap = np.max(np.abs(one.front.s - two.front.s))
        assert gap <= 5 * np.max(np.abs(one.integral_residual))

    def test_initial_front(self):
        p = params()
        a = solve_stefan(p, scaled_cap_data(p, 1.0))
        b = solve_stefan(p, scaled_cap_data(p, 1.0), initial_front=lambda t: 1 + 0.05 * t)
        assert np.max(np.abs(a.front.s - b.front.s)) <= 1e-7


class TestGronwall:
    def test_h_zero(self):
        f = gronwall_bound(1.0, 0.5, 3.0, 0.0, 1.0)
        assert f(0.7) == pytest.approx(3.0)

    def test_linear_case(self):
        c, g = 2.0, 0.5
        f = gronwall_bound(1.0, 0.0, c, g, 2.0)
        t = np.linspace(0, 2, 7)
        np.testing.assert_allclose(f(t), c + g * t, rtol=1e-12)

    def test_callable_inputs(self):
        f = gronwall_bound(2.0, 1.0, lambda t: 1 + t, lambda t: np.ones_like(t), 1.0, samples=20001)
        # n (1 + 1/2 int (1+t)^-1) = (1+t)(1 + log(1+t)/2)
        assert f(1.0) == pytest.approx(2 * (1 + math.log(2) / 2), rel=1e-7)

    @pytest.mark.parametrize("p, q", [(1.0, 1.0), (0.5, 1.0), (1.0, -0.1)])
    def test_invalid_exponents(self, p, q):
        with pytest.raises(DomainError):
            gronwall_bound(p, q, 1.0, 1.0, 1.0)

    def test_invalid_functions(self):
        with pytest.raises(DomainError):
            gronwall_bound(1.0, 0.5, lambda t: 1 - t, 1.0, 0.5)
        with pytest.raises(DomainError):
            gronwall_bound(1.0, 0.5, 1.0, -1.0, 0.5)

    def test_tolerance(self):
        assert dependence_tolerance(0.0, 0.75, 1.0, 1.0, 0.5) == 0.0
        small = dependence_tolerance(0.01, 0.75, 1.0, 1.0, 0.5)
        large = dependence_tolerance(0.1, 0.75, 1.0, 1.0, 0.5)
        assert 0 < small < large
        with pytest.raises(DomainError):
            dependence_tolerance(-1.0, 0.75, 1.0, 1.0, 0.5)


@pytest.fixture(scope="module")
def runs():
    p = params(n=65, dt=0.01)
    return {th: solve_stefan(p, scaled_cap_data(p, th)) for th in (0.25, 0.5, 1.0)}


class TestMonotoneDependence:
    def test_identical(self, runs):
        rep = monotone_dependence_check(runs[1.0], runs[1.0])
        assert rep.passed and rep.max_excess == 0.0 and rep.tol == 0.0

    def test_ordered(self, runs):
        for lo, hi in [(0.25, 0.5), (0.5, 1.0), (0.25, 1.0)]:
            rep = monotone_dependence_check(runs[lo], runs[hi])
            assert rep.passed and rep.max_excess <= 0.0
            assert rep.data_gap > 0

    def test_swapped_rejected(self, runs):
        with pytest.raises(ValidationError):
            monotone_dependence_check(runs[1.0], runs[0.25])

    def test_explicit_tolerance_can_fail(self, runs):
        # the larger data must produce the farther front
        s_lo, s_hi = runs[0.25].front.s, runs[1.0].front.s
        assert np.all(s_lo <= s_hi)
        rep = monotone_dependence_check(runs[0.25], runs[1.0], tol=-1e-3)
        assert not rep.passed
