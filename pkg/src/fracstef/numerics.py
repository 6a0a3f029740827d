"""Grids, grid functions and the special functions used by every other module."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .exceptions import ConfigurationError, ConvergenceError, DomainError, ValidationError

MLF_TOL = 1e-15
MLF_MAX_TERMS = 400
MLF_DESK_RANGE = 50.0


@dataclass(frozen=True)
class Grid:
    """Uniform partition of the reference interval ``[0, 1]`` with ``n`` nodes."""

    n: int

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 3:
            raise ConfigurationError(f"grid needs at least 3 nodes, got n={self.n!r}")
        object.__setattr__(self, "n", int(self.n))

    @property
    def h(self) -> float:
        return 1.0 / (self.n - 1)

    @property
    def nodes(self) -> np.ndarray:
        x = np.arange(self.n, dtype=float) * self.h
        x[-1] = 1.0
        return x

    @property
    def midpoints(self) -> np.ndarray:
        x = self.nodes
        return 0.5 * (x[:-1] + x[1:])

    def sample(self, func) -> "GridFunction":
        """Evaluate ``func`` at the nodes and wrap the result."""
        return GridFunction(self, np.asarray(func(self.nodes), dtype=float))


def make_grid(n: int) -> Grid:
    return Grid(n)


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Real samples on a :class:`Grid`. The value array is read-only.

    ``singular_origin`` marks data whose value at ``x = 0`` is infinite (a
    Riemann-Liouville derivative of data with ``f(0) != 0``); node 0 then
    holds ``nan`` and is exempt from the finiteness check.
    """

    grid: Grid
    values: np.ndarray = field(repr=False)
    singular_origin: bool = False

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (self.grid.n,):
            raise ValidationError(
                f"grid function has shape {v.shape}, expected ({self.grid.n},)"
            )
        checked = v[1:] if self.singular_origin else v
        if not np.all(np.isfinite(checked)):
            raise ValidationError("grid function contains non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def nodes(self) -> np.ndarray:
        return self.grid.nodes

    def __len__(self):
        return self.grid.n

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)

    def with_values(self, values) -> "GridFunction":
        return GridFunction(self.grid, values)


def as_grid_function(f, grid: Grid | None = None) -> GridFunction:
    """Accept a :class:`GridFunction` or a plain array of node values."""
    if isinstance(f, GridFunction):
        if grid is not None and f.grid != grid:
            raise ConfigurationError("grid function lives on a different grid")
        return f
    values = np.asarray(f, dtype=float)
    if grid is None:
        grid = Grid(values.size)
    return GridFunction(grid, values)


def gamma(x):
    """Gamma function for positive real arguments (scalar or array)."""
    arr = np.asarray(x, dtype=float)
    if np.any(~(arr > 0)):
        raise DomainError("gamma is only defined here for positive arguments")
    if arr.ndim == 0:
        return math.gamma(float(arr))
    return special.gamma(arr)


@dataclass(frozen=True)
class MlfParams:
    """Arguments of the two-parameter Mittag-Leffler function ``E_{a,b}(z)``."""

    a: float
    b: float
    z: float | np.ndarray
    tol: float = MLF_TOL
    max_terms: int = MLF_MAX_TERMS

    def __post_init__(self):
        if not self.a > 0 or not self.b > 0:
            raise DomainError(f"Mittag-Leffler needs a > 0 and b > 0, got a={self.a}, b={self.b}")
        if not self.tol > 0:
            raise DomainError("tolerance must be positive")
        if self.max_terms < 1:
            raise DomainError("max_terms must be at least 1")
        z = np.asarray(self.z, dtype=float)
        if not np.all(np.isfinite(z)):
            raise DomainError("Mittag-Leffler argument must be finite")
        if np.any(np.abs(z) > MLF_DESK_RANGE):
            raise DomainError(f"|z| > {MLF_DESK_RANGE:g} is outside the series range")


def mittag_leffler(a, b=None, z=None, *, tol=MLF_TOL, max_terms=MLF_MAX_TERMS):
    r"""Evaluate :math:`E_{a,b}(z) = \sum_k z^k / \Gamma(a k + b)` by its Taylor series.

    Either pass an :class:`MlfParams` as the only argument or ``(a, b, z)``.
    ``z`` may be an array; the result then has the same shape.

    Summation stops once the next term is below ``tol`` (relative to the
    partial sum, floored at 1) *and* consecutive terms shrink by at least a
    factor two, so the discarded tail is bounded by twice the first omitted
    term. Alternating sums that cancel below about six significant digits
    raise :class:`ConvergenceError` rather than return noise.
    """
    p = a if isinstance(a, MlfParams) else MlfParams(a, b, z, tol, max_terms)
    zarr = np.asarray(p.z, dtype=float)
    scalar = zarr.ndim == 0
    z = np.atleast_1d(zarr)

    absz = np.abs(z)
    with np.errstate(divide="ignore"):
        logz = np.log(absz)
    neg = z < 0

    total = np.zeros_like(z)
    mass = np.zeros_like(z)
    done = np.zeros(z.shape, dtype=bool)
    k = 0
    while True:
        if k >= p.max_terms:
            raise ConvergenceError(
                f"Mittag-Leffler series did not reach tol={p.tol:g} in {p.max_terms} terms"
            )
        lg = special.gammaln(p.a * k + p.b)
        if k == 0:
            term = np.full_like(z, math.exp(-lg))
        else:
            with np.errstate(invalid="ignore"):
                mag = np.where(absz > 0, np.exp(k * logz - lg), 0.0)
            term = np.where(neg & (k % 2 == 1), -mag, mag)
        total = np.where(done, total, total + term)
        mass = np.where(done, mass, mass + np.abs(term))

        lg_next = special.gammaln(p.a * (k + 1) + p.b)
        with np.errstate(invalid="ignore", divide="ignore"):
            nxt = np.where(absz > 0, np.exp((k + 1) * logz - lg_next), 0.0)
            ratio = np.where(absz > 0, absz * np.exp(lg_next - special.gammaln(p.a * (k + 2) + p.b)), 0.0)
        done |= (nxt <= p.tol * np.maximum(1.0, np.abs(total))) & (ratio <= 0.5)
        k += 1
        if done.all():
            break

    rounding = np.finfo(float).eps * mass
    if np.any((rounding > 1e-6 * np.abs(total)) & (rounding > 1e-12)):
        raise ConvergenceError("Mittag-Leffler series lost precision to cancellation")
    return float(total[0]) if scalar else total.reshape(zarr.shape)
