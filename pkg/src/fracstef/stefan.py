"""Free-boundary solver: fixed-point iteration on the front.

Given a front ``s`` the moving-boundary problem is solved with ``s``
prescribed, and the front is updated by

    (P s)(t) = (s(t0)^2 - 2 int_{t0}^t flux(tau) s(tau) dtau)^{1/2},

where ``flux`` is the Caputo derivative of ``u`` at the front. A fixed point
of ``P`` satisfies the Stefan condition ``s' = -flux``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid, trapezoid

from .diagnostics import Diagnostics
from .exceptions import ConfigurationError, ConvergenceError, DomainError, ValidationError
from .fracops import assemble_operator, frac_integral_matrix
from .mbp import (
    TRAJ_TOL,
    BoundaryTrajectory,
    SolutionField,
    StefanParams,
    cap_excess,
    check_field,
    check_initial,
    front_fluxes,
    march,
)
from .numerics import GridFunction, as_grid_function

FIXED_POINT_TOL = 1e-8
MAX_ITERS = 50


@dataclass(frozen=True, eq=False)
class SigmaFront:
    """Admissible front: starts at ``b`` with slopes in ``[0, M]`` up to ``tol``."""

    trajectory: BoundaryTrajectory
    M: float
    tol: float = TRAJ_TOL

    def __post_init__(self):
        sd = self.trajectory.sdot
        if sd.min() < -self.tol or sd.max() > self.M + self.tol:
            raise ValidationError(
                f"front slopes [{sd.min():.6g}, {sd.max():.6g}] leave [0, M={self.M:g}]"
            )

    @classmethod
    def constant(cls, b: float, times, M: float) -> "SigmaFront":
        return cls(BoundaryTrajectory.constant(b, times), M)

    @property
    def times(self) -> np.ndarray:
        return self.trajectory.times

    @property
    def s(self) -> np.ndarray:
        return self.trajectory.s

    @property
    def sdot(self) -> np.ndarray:
        return self.trajectory.sdot

    @property
    def b(self) -> float:
        return self.trajectory.b


@dataclass(frozen=True, eq=False)
class StefanSolution:
    field: SolutionField
    front: SigmaFront
    iterations: int
    residual_history: list[float]
    integral_residual: np.ndarray
    windows: list[tuple[float, float]] = field(default_factory=list)
    diagnostics: Diagnostics = field(default_factory=Diagnostics)

    @property
    def params(self) -> StefanParams:
        return self.field.params

    @property
    def times(self) -> np.ndarray:
        return self.front.times


def _p_map(times, s, flux) -> np.ndarray:
    radicand = s[0] ** 2 - 2.0 * cumulative_trapezoid(flux * s, times, initial=0.0)
    if np.any(radicand <= 0.0):
        raise DomainError("front update has a nonpositive radicand; flux sign is wrong upstream")
    return np.sqrt(radicand)


def apply_P(front: SigmaFront, field: SolutionField) -> SigmaFront:
    """One application of the front map with the flux recorded in ``field``."""
    if field.front_flux.shape != front.times.shape:
        raise ConfigurationError("field and front live on different time grids")
    ps = _p_map(front.times, front.s, field.front_flux)
    return SigmaFront(BoundaryTrajectory.from_positions(front.times, ps), front.M, front.tol)


def _front_integral_rows(params: StefanParams) -> np.ndarray:
    """Row giving ``(I^{1-alpha} v)(1)`` from node values."""
    return frac_integral_matrix(params.grid, 1.0 - params.alpha)[-1]


def integral_condition_residual(field: SolutionField, u0) -> np.ndarray:
    """Residual of the integral form of the Stefan condition at every time node."""
    p = field.params
    u0 = as_grid_function(u0, p.grid)
    nodes = p.grid.nodes
    s = field.trajectory.s
    t = field.times
    alpha = p.alpha
    b = float(s[0])
    initial_moment = b**2 * trapezoid(nodes * u0.values, nodes)
    moments = s**2 * trapezoid(nodes[None, :] * field.v, nodes, axis=1)
    front_integral = s ** (1.0 - alpha) * (field.v @ _front_integral_rows(p))
    history = cumulative_trapezoid(front_integral, t, initial=0.0)
    rhs = b**2 + 2.0 * initial_moment - 2.0 * history - 2.0 * moments
    r = s**2 - rhs
    r[0] = 0.0  # the moment terms cancel identically at t = 0
    return r


def _window_indices(times, b_i, M, start, window_length, restart_fraction):
    length = window_length if window_length is not None else b_i / (2.0 * M)
    t0 = times[start]
    end = int(np.searchsorted(times, t0 + length * (1 + 1e-12), side="right")) - 1
    end = max(end, start + 1)
    if end >= times.size - 1:
        return times.size - 1, times.size - 1
    restart = int(np.searchsorted(times, t0 + restart_fraction * length * (1 + 1e-12), side="right")) - 1
    restart = min(max(restart, start + 1), end)
    return end, restart


def solve_stefan(
    params: StefanParams,
    u0,
    *,
    tol: float = FIXED_POINT_TOL,
    max_iters: int = MAX_ITERS,
    window_length: float | None = None,
    restart_fraction: float = 0.5,
    flux_method: str = "extrapolate",
    initial_front=None,
) -> StefanSolution:
    """Solve the free-boundary problem by fixed-point iteration on the front.

    The horizon is covered by windows of length ``s(t_i) / (2M)`` (or
    ``window_length``); each window is solved to convergence and accepted up
    to ``restart_fraction`` of its length, where the next window starts from
    the computed state. The last window is accepted in full.

    ``tol`` is relative to ``b``. ``initial_front``, if given, is a function of
    time used as the first iterate in the first window instead of ``s = b``.
    """
    u0 = check_initial(u0, params)
    excess = cap_excess(u0, params)
    if excess > 1e-12 * max(1.0, params.cap_constant * params.b**params.alpha):
        raise ValidationError(f"initial data exceed C (b^alpha - x^alpha) by {excess:.3e}")
    if not 0.0 < restart_fraction <= 1.0:
        raise ConfigurationError("restart_fraction must lie in (0, 1]")
    if window_length is not None and not window_length > 0:
        raise ConfigurationError("window_length must be positive")
    if max_iters < 1:
        raise ConfigurationError("max_iters must be at least 1")

    times = params.times
    A = assemble_operator(params.order, params.grid)
    grid = params.grid
    M = params.M
    abs_tol = tol * params.b

    s_all = np.empty(times.size)
    v_all = np.empty((times.size, grid.n))
    s_all[0] = params.b
    v_all[0] = u0.values
    history: list[float] = []
    windows: list[tuple[float, float]] = []
    iterations = 0
    start = 0
    while start < times.size - 1:
        b_i = s_all[start]
        end, restart = _window_indices(times, b_i, M, start, window_length, restart_fraction)
        tw = times[start : end + 1]
        if start == 0 and initial_front is not None:
            s = np.asarray(initial_front(tw), dtype=float)
            s[0] = b_i
        else:
            s = np.full(tw.size, b_i)
        omega = 1.0
        prev = math.inf
        converged = False
        for _ in range(max_iters):
            traj = BoundaryTrajectory.from_positions(tw, s)
            v = march(v_all[start], traj, A)
            flux = front_fluxes(v, s, params.order, grid, flux_method)
            ps = _p_map(tw, s, flux)
            step = ps - s
            res = float(np.max(np.abs(step)))
            iterations += 1
            if res > prev:
                omega *= 0.5
            prev = res
            s_next = s + omega * step
            history.append(float(np.max(np.abs(s_next - s))))
            s = s_next
            if history[-1] <= abs_tol:
                converged = True
                break
        if not converged:
            raise ConvergenceError(
                f"front iteration did not reach {abs_tol:.3e} in {max_iters} iterations "
                f"on window [{tw[0]:.6g}, {tw[-1]:.6g}]",
                history,
            )
        # final field consistent with the accepted front
        traj = BoundaryTrajectory.from_positions(tw, s)
        v = march(v_all[start], traj, A)
        keep = restart - start
        s_all[start : restart + 1] = s[: keep + 1]
        v_all[start : restart + 1] = v[: keep + 1]
        windows.append((float(tw[0]), float(tw[-1])))
        start = restart

    traj = BoundaryTrajectory.from_positions(times, s_all)
    flux = front_fluxes(v_all, s_all, params.order, grid, flux_method)
    fld = SolutionField(params, traj, v_all, flux)
    fld.diagnostics.extend(check_field(fld, u0, cap_holds=True))
    front = SigmaFront(traj, M)
    r = integral_condition_residual(fld, u0)

    diag = Diagnostics()
    diag.extend(fld.diagnostics)
    sd = traj.sdot
    rise = traj.s - params.b
    diag.record(
        "front_slope",
        min(float(sd.min()), M - float(sd.max())) + TRAJ_TOL,
        f"slopes in [{sd.min():.6g}, {sd.max():.6g}] within [0, M]",
    )
    diag.record(
        "front_position",
        min(float(rise.min()), float(np.min(M * (times - times[0]) - rise))) + TRAJ_TOL,
        "b <= s <= b + M t",
    )
    diag.record("fixed_point", abs_tol - history[-1], f"last sup-difference {history[-1]:.3e}")
    return StefanSolution(fld, front, iterations, history, r, windows, diag)


# --------------------------------------------------------------------------
# monotone dependence


def gronwall_bound(p: float, q: float, n_fun, h_fun, T: float, samples: int = 2001):
    """Generalised Gronwall bound ``n(t) [1 + (p-q)/p int_0^t h n^{-(p-q)}]``.

    ``n_fun`` and ``h_fun`` may be callables of time or constants. The
    integral is accumulated by the trapezoid rule on ``samples`` points and
    the returned callable interpolates linearly in between.
    """
    if not p > q >= 0:
        raise DomainError(f"need p > q >= 0, got p={p}, q={q}")
    if not T > 0:
        raise DomainError("horizon must be positive")
    t = np.linspace(0.0, T, samples)

    def _eval(f):
        vals = f(t) if callable(f) else np.full_like(t, float(f))
        return np.broadcast_to(np.asarray(vals, dtype=float), t.shape)

    n = _eval(n_fun)
    h = _eval(h_fun)
    if np.any(n <= 0) or np.any(np.diff(n) < 0):
        raise DomainError("n must be positive and nondecreasing")
    if np.any(h < 0):
        raise DomainError("h must be nonnegative")
    integral = cumulative_trapezoid(h * n ** (-(p - q)), t, initial=0.0)
    bound = n * (1.0 + (p - q) / p * integral)

    def evaluate(tt):
        return np.interp(tt, t, bound)

    return evaluate


def dependence_tolerance(delta: float, alpha: float, b2: float, M: float, T: float) -> float:
    """Perturbation budget for ordered data that differ by ``delta``.

    ``n`` and ``h`` are the constants of the comparison argument with ``p = 1``
    and ``q = 1 - alpha``; the bound is evaluated at ``T``.
    """
    if delta < 0:
        raise DomainError("delta must be nonnegative")
    if delta == 0:
        return 0.0
    n = delta * (1.0 + b2 / 2.0 + delta / (2.0 * b2) + delta / 2.0 + delta**2 / (8.0 * b2))
    h = M * (b2 + delta + M * T) ** alpha / (b2 * math.gamma(1.0 + alpha) * math.gamma(2.0 - alpha))
    return float(gronwall_bound(1.0, 1.0 - alpha, n, h, T)(T))


@dataclass(frozen=True)
class MonotonicityReport:
    max_excess: float
    tol: float
    passed: bool
    data_gap: float


def monotone_dependence_check(
    run1: StefanSolution, run2: StefanSolution, tol: float | None = None
) -> MonotonicityReport:
    """Check ``s1 <= s2 + tol`` for runs with ordered data.

    With ``tol`` omitted the budget comes from :func:`dependence_tolerance`
    at ``delta`` equal to the largest gap between the two initial data.
    """
    p1, p2 = run1.params, run2.params
    if p1.order != p2.order or p1.M != p2.M or p1.n != p2.n:
        raise ValidationError("runs must share order, M and grid")
    if not np.array_equal(run1.times, run2.times):
        raise ValidationError("runs must share the time grid")
    if p1.b > p2.b:
        raise ValidationError("data are not ordered: b1 > b2")
    u1 = run1.field.v[0]
    u2 = run2.field.v[0]
    if p1.b != p2.b:
        # compare on the physical nodes of the larger domain
        x2 = p2.grid.nodes * p2.b
        u1 = np.interp(x2, p1.grid.nodes * p1.b, u1, right=0.0)
    gap = u2 - u1
    if np.min(gap) < -1e-12 * max(1.0, float(np.max(np.abs(u2)))):
        raise ValidationError("data are not ordered: u0 of the first run exceeds the second")
    delta = float(np.max(gap)) + (p2.b - p1.b)
    if tol is None:
        tol = dependence_tolerance(delta, p2.alpha, p2.b, p2.M, p2.T)
    excess = float(np.max(run1.front.s - run2.front.s))
    return MonotonicityReport(excess, float(tol), excess <= tol, delta)
