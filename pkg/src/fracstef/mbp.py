"""Moving-boundary problem with a prescribed front.

The domain ``0 < x < s(t)`` is mapped onto ``0 < p < 1`` by ``p = x / s(t)``.
The field ``v(p, t) = u(p s(t), t)`` then solves

    v_t = p (s'/s) v_p + s^{-(1+alpha)} d/dp D^alpha v,   v(0, t) = v(1, t) = 0,

which is marched by implicit Euler with coefficients frozen at the new time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .diagnostics import Diagnostics
from .exceptions import ConfigurationError, StepError, ValidationError
from .fracops import (
    FracOrder,
    OperatorMatrix,
    as_order,
    assemble_operator,
    caputo,
    caputo_at,
    caputo_matrix,
)
from .numerics import Grid, GridFunction, as_grid_function

#: Slack allowed on the front invariants (slope and position bounds).
TRAJ_TOL = 1e-10
#: Relative slack of the maximum principle, in units of max u0.
MAX_PRINCIPLE_TOL = 1e-8
#: Slack of the a-priori bound u <= C (s^alpha - x^alpha), in units of C b^alpha.
CAP_TOL = 0.02
#: Slack of the flux window [-M/2, 0]: below, in units of M.
FLUX_LOWER_TOL = 0.05
#: Slack of the flux window [-M/2, 0]: above, in units of M.
FLUX_UPPER_TOL = 1e-6

FLUX_METHODS = ("extrapolate", "node")


@dataclass(frozen=True)
class StefanParams:
    """Physical and discretisation parameters of one run."""

    order: FracOrder
    b: float
    M: float
    T: float
    n: int
    dt: float

    def __post_init__(self):
        object.__setattr__(self, "order", as_order(self.order))
        for name in ("b", "M", "T", "dt"):
            val = float(getattr(self, name))
            if not (math.isfinite(val) and val > 0.0):
                raise ConfigurationError(f"{name} must be positive and finite, got {val!r}")
            object.__setattr__(self, name, val)
        if int(self.n) != self.n or self.n < 3:
            raise ConfigurationError(f"n must be an integer >= 3, got {self.n!r}")
        object.__setattr__(self, "n", int(self.n))

    @property
    def alpha(self) -> float:
        return self.order.alpha

    @property
    def grid(self) -> Grid:
        return Grid(self.n)

    @property
    def n_steps(self) -> int:
        return max(1, math.ceil(self.T / self.dt - 1e-9))

    @property
    def times(self) -> np.ndarray:
        t = np.linspace(0.0, self.T, self.n_steps + 1)
        t[-1] = self.T
        return t

    @property
    def cap_constant(self) -> float:
        """``M / (2 Gamma(1 + alpha))``, the prefactor of the a-priori bound."""
        return self.M / (2.0 * math.gamma(1.0 + self.alpha))

    def replace(self, **changes) -> "StefanParams":
        kw = dict(order=self.order, b=self.b, M=self.M, T=self.T, n=self.n, dt=self.dt)
        kw.update(changes)
        return StefanParams(**kw)


def _readonly(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class BoundaryTrajectory:
    """Front positions on a time grid.

    ``sdot[k]`` is the slope over ``[t_{k-1}, t_k]`` (the backward slope used
    by the implicit step ending at ``t_k``); ``sdot[0]`` repeats ``sdot[1]``.
    """

    times: np.ndarray
    s: np.ndarray
    sdot: np.ndarray

    def __post_init__(self):
        t, s, sd = (_readonly(getattr(self, k)) for k in ("times", "s", "sdot"))
        if t.ndim != 1 or t.size < 2 or s.shape != t.shape or sd.shape != t.shape:
            raise ValidationError("trajectory arrays must be 1-D of equal length >= 2")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(s)) and np.all(np.isfinite(sd))):
            raise ValidationError("trajectory contains non-finite values")
        if np.any(np.diff(t) <= 0):
            raise ValidationError("trajectory times must be strictly increasing")
        if np.any(s <= 0):
            raise ValidationError("front positions must be positive")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "sdot", sd)

    @classmethod
    def from_positions(cls, times, s) -> "BoundaryTrajectory":
        times = np.asarray(times, dtype=float)
        s = np.asarray(s, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            slopes = np.diff(s) / np.diff(times)
        return cls(times, s, np.concatenate([slopes[:1], slopes]))

    @classmethod
    def from_function(cls, times, func) -> "BoundaryTrajectory":
        times = np.asarray(times, dtype=float)
        return cls.from_positions(times, np.asarray(func(times), dtype=float))

    @classmethod
    def constant(cls, b: float, times) -> "BoundaryTrajectory":
        times = np.asarray(times, dtype=float)
        return cls(times, np.full(times.size, float(b)), np.zeros(times.size))

    @property
    def b(self) -> float:
        return float(self.s[0])

    def at(self, t):
        return np.interp(t, self.times, self.s)

    def resample(self, times) -> "BoundaryTrajectory":
        times = np.asarray(times, dtype=float)
        if times.size == self.times.size and np.array_equal(times, self.times):
            return self
        return BoundaryTrajectory.from_positions(times, self.at(times))

    def violations(self, b: float, M: float, tol: float = TRAJ_TOL) -> dict[str, float]:
        """Amount by which each front invariant is exceeded (zero when it holds)."""
        t0 = self.times - self.times[0]
        return {
            "initial": abs(self.s[0] - b),
            "slope_low": max(0.0, -float(self.sdot.min()) - tol),
            "slope_high": max(0.0, float(self.sdot.max()) - M - tol),
            "position_low": max(0.0, float(np.max(b - self.s)) - tol),
            "position_high": max(0.0, float(np.max(self.s - b - M * t0)) - tol),
        }

    def validate(self, b: float, M: float, tol: float = TRAJ_TOL):
        bad = {k: v for k, v in self.violations(b, M, tol).items() if v > tol}
        if bad:
            raise ValidationError(f"front violates its invariants: {bad}")


@dataclass(frozen=True, eq=False)
class SolutionField:
    """Reference-domain field ``v`` at every time node plus the front flux."""

    params: StefanParams
    trajectory: BoundaryTrajectory
    v: np.ndarray
    front_flux: np.ndarray
    diagnostics: Diagnostics = field(default_factory=Diagnostics, compare=False)

    def __post_init__(self):
        v = _readonly(self.v)
        if v.shape != (self.trajectory.times.size, self.params.n):
            raise ValidationError("field shape does not match the trajectory and grid")
        if not np.all(np.isfinite(v)):
            raise ValidationError("field contains non-finite values")
        if np.any(v[:, 0] != 0.0) or np.any(v[:, -1] != 0.0):
            raise ValidationError("field violates the Dirichlet conditions")
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "front_flux", _readonly(self.front_flux))

    @property
    def times(self) -> np.ndarray:
        return self.trajectory.times

    @property
    def grid(self) -> Grid:
        return self.params.grid

    def snapshot(self, k: int) -> GridFunction:
        return GridFunction(self.grid, self.v[k])

    def physical(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Physical nodes ``x = p s(t_k)`` and the values of ``u`` there."""
        return self.grid.nodes * self.trajectory.s[k], self.v[k].copy()


# --------------------------------------------------------------------------
# initial data


def cap_profile(params: StefanParams) -> GridFunction:
    """``C (b^alpha - x^alpha)`` sampled at the physical nodes ``x = p b``."""
    p = params.grid.nodes
    return GridFunction(params.grid, params.cap_constant * params.b**params.alpha * (1.0 - p**params.alpha))


def scaled_cap_data(params: StefanParams, theta: float) -> GridFunction:
    """Admissible initial data of size ``theta`` relative to the cap.

    ``theta alpha C b^alpha (p^alpha - p^{1+alpha})`` vanishes at both ends,
    lies in the operator domain and stays below ``theta`` times the cap.
    """
    theta = float(theta)
    if not 0.0 < theta <= 1.0:
        raise ValidationError(f"theta out of (0,1]: {theta!r}")
    a = params.alpha
    p = params.grid.nodes
    scale = theta * a * params.cap_constant * params.b**a
    return GridFunction(params.grid, scale * (p**a - p ** (1.0 + a)))


def sample_initial(params: StefanParams, func) -> GridFunction:
    """Sample a function of the physical variable on ``x = p b``."""
    x = params.grid.nodes * params.b
    return GridFunction(params.grid, np.asarray(func(x), dtype=float))


def check_initial(u0, params: StefanParams, tol: float = 1e-12) -> GridFunction:
    u0 = as_grid_function(u0, params.grid)
    scale = max(1.0, float(np.max(np.abs(u0.values))))
    if abs(u0.values[0]) > tol * scale or abs(u0.values[-1]) > tol * scale:
        raise ValidationError("initial data must vanish at both ends")
    if np.min(u0.values) < -tol * scale:
        raise ValidationError("initial data must be nonnegative")
    vals = np.clip(u0.values, 0.0, None)
    vals[0] = vals[-1] = 0.0
    return u0.with_values(vals)


def cap_excess(u0, params: StefanParams) -> float:
    """``max (u0 - C (b^alpha - x^alpha))``; nonpositive when the cap holds."""
    u0 = as_grid_function(u0, params.grid)
    return float(np.max(u0.values - cap_profile(params).values))


# --------------------------------------------------------------------------
# stepping


def _upwind_matrix(grid: Grid) -> np.ndarray:
    """``diag(p) D_+`` on interior nodes; the outflow end carries ``v = 0``."""
    m = grid.n - 2
    p = grid.nodes[1:-1]
    d = np.zeros((m, m))
    idx = np.arange(m)
    d[idx, idx] = -1.0 / grid.h
    d[idx[:-1], idx[:-1] + 1] = 1.0 / grid.h
    return p[:, None] * d


def step_matrix(A: OperatorMatrix, s: float, sdot: float, dt: float, upwind=None) -> np.ndarray:
    """Interior matrix ``E - dt (s^{-(1+alpha)} A + (s'/s) diag(p) D_+)``."""
    alpha = A.order.alpha
    if upwind is None:
        upwind = _upwind_matrix(A.grid)
    K = s ** (-(1.0 + alpha)) * A.entries + (sdot / s) * upwind
    return np.eye(A.size) - dt * K


def _solve(matrix: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    try:
        with np.errstate(all="ignore"):
            out = linalg.solve(matrix, rhs, check_finite=False)
    except (linalg.LinAlgError, ValueError) as exc:
        raise StepError(f"implicit step failed: {exc}") from exc
    if not np.all(np.isfinite(out)):
        raise StepError("implicit step produced non-finite values")
    return out


def advance_step(v, traj: BoundaryTrajectory, k: int, A: OperatorMatrix) -> GridFunction:
    """One implicit Euler step from ``t_k`` to ``t_{k+1}``."""
    v = as_grid_function(v, A.grid)
    if not 0 <= k < traj.times.size - 1:
        raise ConfigurationError(f"step index {k} outside the trajectory")
    if v.values[0] != 0.0 or v.values[-1] != 0.0:
        raise ValidationError("state violates the Dirichlet conditions")
    dt = traj.times[k + 1] - traj.times[k]
    M = step_matrix(A, traj.s[k + 1], traj.sdot[k + 1], dt)
    out = np.zeros(A.grid.n)
    out[1:-1] = _solve(M, v.values[1:-1])
    return GridFunction(A.grid, out)


def march(v0: np.ndarray, traj: BoundaryTrajectory, A: OperatorMatrix) -> np.ndarray:
    """All states along ``traj`` starting from ``v0``; rows are time levels."""
    grid = A.grid
    up = _upwind_matrix(grid)
    out = np.zeros((traj.times.size, grid.n))
    out[0] = v0
    for k in range(traj.times.size - 1):
        dt = traj.times[k + 1] - traj.times[k]
        M = step_matrix(A, traj.s[k + 1], traj.sdot[k + 1], dt, up)
        out[k + 1, 1:-1] = _solve(M, out[k, 1:-1])
    return out


def flux_at_front(v, s_val: float, order, method: str = "extrapolate") -> float:
    r"""Front value :math:`D^\alpha u(s^-)` from reference-domain samples.

    ``extrapolate`` takes the quadratic through the L1 values at the last
    three interior nodes; ``node`` takes the L1 value at ``p = 1`` itself.
    Both are scaled by ``s^{-alpha}``.
    """
    v = as_grid_function(v)
    order = as_order(order)
    if not s_val > 0:
        raise ValidationError("front position must be positive")
    if method == "extrapolate":
        if v.grid.n < 5:
            raise ConfigurationError("extrapolated flux needs at least 5 nodes")
        d = caputo(v, order).values
        value = 3.0 * d[-2] - 3.0 * d[-3] + d[-4]
    elif method == "node":
        value = float(caputo_at(v, order, 1.0))
    else:
        raise ConfigurationError(f"unknown flux method {method!r}; choose from {FLUX_METHODS}")
    return float(s_val ** (-order.alpha) * value)


def front_fluxes(v: np.ndarray, s: np.ndarray, order, grid: Grid, method: str = "extrapolate") -> np.ndarray:
    order = as_order(order)
    if method == "extrapolate":
        if grid.n < 5:
            raise ConfigurationError("extrapolated flux needs at least 5 nodes")
        C = caputo_matrix(grid, order)
        rows = 3.0 * C[-2] - 3.0 * C[-3] + C[-4]
        vals = v @ rows
    else:
        vals = np.array([float(caputo_at(GridFunction(grid, row), order, 1.0)) for row in v])
    return s ** (-order.alpha) * vals


# --------------------------------------------------------------------------
# postconditions


def check_field(field_: SolutionField, u0: GridFunction, cap_holds: bool | None = None) -> Diagnostics:
    """Record the maximum principle, the cap bound and the flux window."""
    p = field_.params
    v = field_.v
    diag = Diagnostics()
    scale = float(np.max(u0.values))
    tol = MAX_PRINCIPLE_TOL * scale if scale > 0 else MAX_PRINCIPLE_TOL
    diag.record("dirichlet", -float(np.max(np.abs(v[:, [0, -1]]))), "boundary values are exact zeros")
    diag.record("max_principle_min", float(np.min(v)) + tol, f"tol={tol:.3e}")
    boundary_max = max(scale, 0.0)
    interior_max = float(np.max(v[1:, 1:-1])) if v.shape[0] > 1 else 0.0
    diag.record("max_principle_max", boundary_max + tol - interior_max, f"tol={tol:.3e}")

    if cap_holds is None:
        cap_holds = cap_excess(u0, p) <= 1e-12 * max(1.0, p.cap_constant * p.b**p.alpha)
    if cap_holds:
        nodes = p.grid.nodes
        s = field_.trajectory.s[:, None]
        cap = p.cap_constant * (s**p.alpha) * (1.0 - nodes[None, :] ** p.alpha)
        data_scale = p.cap_constant * p.b**p.alpha
        excess = float(np.max(v - cap))
        diag.record("cap_bound", CAP_TOL * data_scale - excess, f"max(u - cap)={excess:.3e}")
        flux = field_.front_flux
        low = float(np.min(flux + 0.5 * p.M)) + FLUX_LOWER_TOL * p.M
        high = FLUX_UPPER_TOL * p.M - float(np.max(flux))
        diag.record("flux_window", min(low, high), f"flux in [{flux.min():.6g}, {flux.max():.6g}]")
    return diag


def solve_mbp(
    params: StefanParams,
    traj: BoundaryTrajectory,
    u0,
    *,
    operator: OperatorMatrix | None = None,
    flux_method: str = "extrapolate",
    check: bool = True,
) -> SolutionField:
    """March the prescribed-front problem over ``params.times``.

    The trajectory is resampled onto the solver time grid by linear
    interpolation. Postconditions are recorded in ``field.diagnostics``.
    """
    u0 = check_initial(u0, params)
    traj = traj.resample(params.times)
    traj.validate(params.b, params.M)
    A = operator if operator is not None else assemble_operator(params.order, params.grid)
    if A.grid != params.grid:
        raise ConfigurationError("operator was assembled on a different grid")
    v = march(u0.values, traj, A)
    flux = front_fluxes(v, traj.s, params.order, params.grid, flux_method)
    out = SolutionField(params, traj, v, flux)
    if check:
        out.diagnostics.extend(check_field(out, u0))
    return out
