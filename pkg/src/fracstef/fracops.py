"""Discrete fractional operators on uniform grids of ``[0, 1]``.

Every operator here is a product-integration rule: the data are replaced by
their piecewise-linear interpolant (or its piecewise-constant slopes) and the
power kernel is integrated exactly against it cell by cell.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .exceptions import ConfigurationError, DomainError
from .numerics import Grid, GridFunction, as_grid_function

_GAUSS_POINTS = 8


@dataclass(frozen=True)
class FracOrder:
    """Order of a fractional derivative, restricted to ``0 < alpha < 1``."""

    alpha: float

    def __post_init__(self):
        a = float(self.alpha)
        if not 0.0 < a < 1.0:
            raise DomainError(f"fractional order must lie in (0, 1), got {self.alpha!r}")
        object.__setattr__(self, "alpha", a)


def as_order(order) -> FracOrder:
    return order if isinstance(order, FracOrder) else FracOrder(order)


# --------------------------------------------------------------------------
# weight matrices (cached per grid size and order; callers get copies)


@lru_cache(maxsize=64)
def _integral_weights(n: int, mu: float) -> np.ndarray:
    """Product-integration matrix of ``I^mu`` for piecewise-linear data."""
    h = 1.0 / (n - 1)
    i = np.arange(n, dtype=float)[:, None]
    j = np.arange(n, dtype=float)[None, :]
    d = i - j
    p = mu + 1.0

    def pw(x):
        return np.where(x > 0, np.abs(x) ** p, 0.0)

    w = pw(d + 1) - 2 * pw(d) + pw(d - 1)
    w = np.where(d > 0, w, 0.0)
    w[:, 0] = np.where(i[:, 0] > 0, pw(i[:, 0] - 1) - (i[:, 0] - 1 - mu) * i[:, 0] ** mu, 0.0)
    np.fill_diagonal(w, 1.0)
    w[0, 0] = 0.0
    w *= h**mu / math.gamma(mu + 2.0)
    w.setflags(write=False)
    return w


def _cell_kernel(shift: np.ndarray, beta: float) -> np.ndarray:
    return np.where(shift > 0, np.abs(shift) ** beta, 0.0)


@lru_cache(maxsize=64)
def _l1_weights(n: int, alpha: float) -> np.ndarray:
    """L1 matrix: Caputo derivative at the nodes from cell slopes (row 0 left zero)."""
    h = 1.0 / (n - 1)
    i = np.arange(n, dtype=float)[:, None]
    j = np.arange(n, dtype=float)[None, :]
    beta = 1.0 - alpha
    # cell [x_k, x_{k+1}] carries weight W(i-k) - W(i-k-1); node j collects
    # +weight of cell j-1 and -weight of cell j
    left = np.where(j >= 1, _cell_kernel(i - j + 1, beta) - _cell_kernel(i - j, beta), 0.0)
    right = np.where(j <= n - 2, _cell_kernel(i - j, beta) - _cell_kernel(i - j - 1, beta), 0.0)
    w = (left - right) * h ** (-alpha) / math.gamma(2.0 - alpha)
    w.setflags(write=False)
    return w


@lru_cache(maxsize=64)
def _half_node_weights(n: int, alpha: float) -> np.ndarray:
    """L1 rule evaluated at the cell midpoints ``x_{k+1/2}`` (shape ``(n-1, n)``)."""
    h = 1.0 / (n - 1)
    k = np.arange(n - 1, dtype=float)[:, None] + 0.5
    j = np.arange(n, dtype=float)[None, :]
    beta = 1.0 - alpha
    left = np.where(j >= 1, _cell_kernel(k - j + 1, beta) - _cell_kernel(k - j, beta), 0.0)
    right = np.where(j <= n - 2, _cell_kernel(k - j, beta) - _cell_kernel(k - j - 1, beta), 0.0)
    w = (left - right) * h ** (-alpha) / math.gamma(2.0 - alpha)
    w.setflags(write=False)
    return w


def frac_integral_matrix(grid: Grid, mu: float) -> np.ndarray:
    if not mu > 0:
        raise DomainError("integration order must be positive")
    return np.array(_integral_weights(grid.n, float(mu)))


def caputo_matrix(grid: Grid, order) -> np.ndarray:
    """Node-value Caputo matrix, node 0 by linear extrapolation from nodes 1, 2."""
    alpha = as_order(order).alpha
    w = np.array(_l1_weights(grid.n, alpha))
    w[0] = 2.0 * w[1] - w[2]
    return w


# --------------------------------------------------------------------------
# operators on grid functions


def frac_integral(f, order) -> GridFunction:
    r"""Fractional integral :math:`I^\mu f` at the grid nodes.

    ``order`` may be any positive real here (a :class:`FracOrder` or a float),
    since ``I^{1-alpha}`` and ``I^{alpha+1}`` are both needed elsewhere.
    """
    f = as_grid_function(f)
    mu = order.alpha if isinstance(order, FracOrder) else float(order)
    return f.with_values(frac_integral_matrix(f.grid, mu) @ f.values)


def caputo(f, order) -> GridFunction:
    """L1 approximation of the Caputo derivative at the nodes."""
    f = as_grid_function(f)
    return f.with_values(caputo_matrix(f.grid, order) @ f.values)


def caputo_at(f, order, x) -> np.ndarray:
    r"""Caputo derivative of the piecewise-linear interpolant of ``f`` at points ``x``.

    Evaluated exactly (no quadrature): each cell slope is integrated against
    :math:`(x - p)^{-\alpha}` in closed form.
    """
    f = as_grid_function(f)
    alpha = as_order(order).alpha
    nodes = f.nodes
    slopes = np.diff(f.values) / f.grid.h
    x = np.asarray(x, dtype=float)
    xa = np.atleast_1d(x)[:, None]
    beta = 1.0 - alpha
    kern = _cell_kernel(xa - nodes[None, :-1], beta) - _cell_kernel(xa - nodes[None, 1:], beta)
    out = kern @ slopes / math.gamma(2.0 - alpha)
    return out.reshape(x.shape)


def rl_deriv(f, order) -> GridFunction:
    r"""Riemann-Liouville derivative via :math:`\partial^\alpha f = D^\alpha f + f(0) x^{-\alpha}/\Gamma(1-\alpha)`.

    When ``f(0) != 0`` the value at node 0 is infinite; the result then has
    ``singular_origin`` set and carries ``nan`` there.
    """
    f = as_grid_function(f)
    alpha = as_order(order).alpha
    out = np.array(caputo(f, order).values)
    f0 = f.values[0]
    if f0 == 0.0:
        return f.with_values(out)
    x = f.nodes
    out[1:] += f0 * x[1:] ** (-alpha) / math.gamma(1.0 - alpha)
    out[0] = np.nan
    return GridFunction(f.grid, out, singular_origin=True)


def leibniz_rl(f, g, order) -> GridFunction:
    r"""Right-hand side of the product rule for :math:`\partial^\alpha (f g)`.

    Returns :math:`g\,\partial^\alpha f + \frac{\alpha}{\Gamma(1-\alpha)}
    \int_0^x (x-p)^{-\alpha-1}(g(x)-g(p)) f(p)\,dp`. The integral is written as
    a weakly singular kernel :math:`(x-p)^{-\alpha}` against the bounded
    quotient :math:`(g(x)-g(p)) f(p)/(x-p)`, whose diagonal value uses a
    one-sided difference for :math:`g'`.
    """
    f = as_grid_function(f)
    g = as_grid_function(g, f.grid)
    alpha = as_order(order).alpha
    grid = f.grid
    x = grid.nodes
    gv, fv = g.values, f.values

    dg = np.gradient(gv, grid.h, edge_order=2)
    diff_x = x[:, None] - x[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        q = (gv[:, None] - gv[None, :]) * fv[None, :] / diff_x
    q[np.diag_indices(grid.n)] = dg * fv

    # row i integrates q[i, :] against (x_i - p)^{-alpha} over [0, x_i]
    w = _integral_weights(grid.n, 1.0 - alpha) * math.gamma(1.0 - alpha)
    integral = np.einsum("ij,ij->i", w, q)

    rl = rl_deriv(f, order)
    out = gv * rl.values + alpha / math.gamma(1.0 - alpha) * integral
    if rl.singular_origin:
        return GridFunction(grid, out, singular_origin=True)
    return f.with_values(out)


def _gauss(q=_GAUSS_POINTS):
    t, w = np.polynomial.legendre.leggauss(q)
    return 0.5 * (t + 1.0), 0.5 * w


def _weighted_square_integral(w: np.ndarray, x: np.ndarray, alpha: float) -> float:
    r"""Exact :math:`\int_0^1 x^{-\alpha} w(x)^2 dx` for piecewise-linear ``w``."""
    a, b = x[:-1], x[1:]
    m = np.diff(w) / (b - a)
    c0 = w[:-1] - m * a  # w = c0 + m x on each cell
    e = 1.0 - alpha

    def mom(j):
        return (b ** (j + e) - a ** (j + e)) / (j + e)

    return float(np.sum(c0**2 * mom(0) + 2 * c0 * m * mom(1) + m**2 * mom(2)))


def coercivity_split(w, order) -> tuple[float, float]:
    r"""Both sides of the energy identity for :math:`\int_0^1 \partial^\alpha w\, w`.

    ``lhs`` is the pairing itself; ``rhs`` is the Gagliardo-type double
    integral weighted by :math:`\alpha / (4\Gamma(1-\alpha))` plus the boundary term
    :math:`\frac{1}{2\Gamma(1-\alpha)}\int_0^1 [(1-x)^{-\alpha}+x^{-\alpha}]w^2`.
    Both are computed for the piecewise-linear interpolant of ``w``, so they
    differ only by quadrature error.
    """
    w = as_grid_function(w)
    alpha = as_order(order).alpha
    x = w.nodes
    v = w.values
    h = w.grid.h
    slopes = np.diff(v) / h
    t, gw = _gauss()

    # lhs: Caputo part at Gauss points plus the exact singular RL part
    pts = (x[:-1, None] + h * t[None, :]).ravel()
    dv = caputo_at(w, alpha, pts)
    vint = np.interp(pts, x, v)
    lhs = h * float(np.sum(np.tile(gw, x.size - 1) * dv * vint))
    if v[0] != 0.0:
        lhs += v[0] / math.gamma(1.0 - alpha) * _caputo_free_moment(v, x, alpha)

    # rhs: diagonal cell squares in closed form, the rest by tensor Gauss
    diag = np.sum(slopes**2) * 2.0 * h ** (3.0 - alpha) / ((2.0 - alpha) * (3.0 - alpha))
    off = 0.0
    xp = x[:-1, None] + h * t[None, :]  # (cells, q)
    vp = v[:-1, None] + slopes[:, None] * h * t[None, :]
    wq = np.outer(gw, gw) * h * h
    for k in range(x.size - 2):
        xa, va = xp[k][:, None], vp[k][:, None]  # points of cell k
        xb, vb = xp[k + 1 :][:, None, :], vp[k + 1 :][:, None, :]
        integrand = (vb - va) ** 2 / np.abs(xb - xa) ** (1.0 + alpha)
        off += float(np.sum(integrand * wq[None, :, :]))
    double = diag + 2.0 * off
    bnd = _weighted_square_integral(v, x, alpha) + _weighted_square_integral(v[::-1], x, alpha)
    g = math.gamma(1.0 - alpha)
    rhs = alpha / (4.0 * g) * double + bnd / (2.0 * g)
    return lhs, rhs


def _caputo_free_moment(v, x, alpha):
    """Exact integral of ``x^{-alpha} v(x)`` for the interpolant of ``v``."""
    a, b = x[:-1], x[1:]
    m = np.diff(v) / (b - a)
    c0 = v[:-1] - m * a
    e = 1.0 - alpha
    return float(np.sum(c0 * (b**e - a**e) / e + m * (b ** (e + 1) - a ** (e + 1)) / (e + 1)))


# --------------------------------------------------------------------------
# the Dirichlet operator d/dx D^alpha


@dataclass(frozen=True, eq=False)
class OperatorMatrix:
    """Discrete ``d/dx D^alpha`` with homogeneous Dirichlet data eliminated.

    ``entries`` acts on the ``n - 2`` interior unknowns. ``full`` keeps the
    boundary columns as well (interior rows x all nodes), which is what is
    needed to apply the operator to data that do not vanish at ``x = 1``,
    such as samples of ``x^alpha``.
    """

    order: FracOrder
    grid: Grid
    full: np.ndarray = field(repr=False)

    def __post_init__(self):
        full = np.array(self.full, dtype=float)
        if full.shape != (self.grid.n - 2, self.grid.n):
            raise ConfigurationError("operator matrix has the wrong shape for its grid")
        full.setflags(write=False)
        object.__setattr__(self, "full", full)

    @property
    def entries(self) -> np.ndarray:
        return self.full[:, 1:-1]

    @property
    def size(self) -> int:
        return self.grid.n - 2

    def apply(self, u) -> np.ndarray:
        """Apply to node values; returns the interior values of ``d/dx D^alpha u``."""
        u = as_grid_function(u, self.grid)
        return self.full @ u.values


def _redistribute(full: np.ndarray, clipped: np.ndarray, x: np.ndarray, alpha: float):
    """Return removed negative weight to the row without losing exactness.

    Row ``r`` (node ``r + 1``) lost ``sum_j w_j`` on constants and
    ``sum_j w_j x_j^alpha`` on :math:`x^\alpha`. The second amount goes to the
    nearest interior neighbour, scaled by its node value, and the rest to the
    boundary column, so both functions are still annihilated. Rows where
    the neighbour would turn negative fall back to the boundary column only.
    """
    m = full.shape[0]
    lost_one = clipped.sum(axis=1)
    lost_pow = clipped @ x[1:-1] ** alpha
    nodes = np.arange(1, m + 1)
    nb = np.where(nodes >= 2, nodes - 1, nodes + 1)
    rows = np.arange(m)
    add_nb = lost_pow / x[nb] ** alpha
    ok = full[rows, nb] + add_nb >= 0.0
    add_nb = np.where(ok, add_nb, 0.0)
    full[rows, nb] += add_nb
    full[:, 0] += lost_one - add_nb


def assemble_operator(order, grid: Grid, *, monotone: bool = True) -> OperatorMatrix:
    r"""Assemble the discrete :math:`\frac{d}{dx} D^\alpha` on a uniform grid.

    The Caputo derivative is taken by the L1 rule at the cell midpoints, and
    the outer derivative is the centred difference of those midpoint values.
    A starting-weight correction on the first interior column makes the
    midpoint values exact for :math:`x^\alpha`, so the matrix annihilates
    samples of :math:`x^\alpha` up to rounding; the boundary column carries
    the opposite weight, so constants are annihilated as well.

    With ``monotone`` set, negative off-diagonal entries of the interior block
    left over from the correction are removed and their weight handed to a
    neighbouring column and the boundary column, keeping ``E - dt A`` an
    M-matrix while constants and :math:`x^\alpha` stay in the kernel. For
    ``alpha >= 0.6`` they sit on the first interior column, far from the
    origin, and are around ``1e-9`` of the diagonal.
    For small ``alpha`` clipping is substantial and the exactness on
    :math:`x^\alpha` is lost near the origin.
    """
    order = as_order(order)
    alpha = order.alpha
    if grid.n < 4:
        raise ConfigurationError("operator assembly needs at least 4 nodes")
    x = grid.nodes
    half = np.array(_half_node_weights(grid.n, alpha))
    miss = math.gamma(alpha + 1.0) - half @ x**alpha
    # the boundary column absorbs the opposite weight so constants stay exact
    half[:, 1] += miss / x[1] ** alpha
    half[:, 0] -= miss / x[1] ** alpha
    full = (half[1:] - half[:-1]) / grid.h
    if monotone:
        inner = full[:, 1:-1]
        off = ~np.eye(grid.n - 2, dtype=bool)
        clipped = np.where(off & (inner < 0.0), inner, 0.0)
        inner -= clipped
        _redistribute(full, clipped, x, alpha)
    return OperatorMatrix(order, grid, full)
