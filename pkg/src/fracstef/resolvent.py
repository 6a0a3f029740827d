"""Mittag-Leffler representation of the resolvent of ``d/dx D^alpha`` with Dirichlet data.

For ``lambda <= 0`` the problem ``lambda u - d/dx D^alpha u = g``,
``u(0) = u(1) = 0`` has the solution

    u(x) = a K(x) - (g * K)(x),   K(x) = x^alpha E_{alpha+1, alpha+1}(lambda x^{alpha+1}),

with ``a = (g * K)(1) / E_{alpha+1, alpha+1}(lambda)`` chosen to make ``u(1)`` vanish.
The module uses it as an analytic oracle for the discrete operator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigurationError, DomainError, SingularResolventError
from .fracops import FracOrder, OperatorMatrix, _integral_weights, as_order, assemble_operator
from .numerics import GridFunction, as_grid_function, mittag_leffler

#: Smallest admissible |E_{alpha+1,alpha+1}(lambda)| before the problem counts as singular.
ML_GUARD = 1e-10


@dataclass(frozen=True, eq=False)
class ResolventProblem:
    order: FracOrder
    lam: float
    g: GridFunction

    def __post_init__(self):
        object.__setattr__(self, "order", as_order(self.order))
        object.__setattr__(self, "g", as_grid_function(self.g))
        lam = float(self.lam)
        if not lam <= 0.0:
            raise DomainError(f"lambda must be real and non-positive, got {self.lam!r}")
        object.__setattr__(self, "lam", lam)
        e = self.ml_at_one()
        if abs(e) <= ML_GUARD:
            raise SingularResolventError(
                f"E_(a+1,a+1)(lambda) = {e:.3e} is too close to zero for lambda={lam}"
            )

    @property
    def grid(self):
        return self.g.grid

    def ml_at_one(self) -> float:
        a = self.order.alpha + 1.0
        return mittag_leffler(a, a, self.lam)


def resolvent_kernel(order, lam: float, x) -> np.ndarray:
    r""":math:`x^\alpha E_{\alpha+1,\alpha+1}(\lambda x^{\alpha+1})` for ``x >= 0``."""
    alpha = as_order(order).alpha
    x = np.asarray(x, dtype=float)
    a = alpha + 1.0
    return x**alpha * mittag_leffler(a, a, lam * x**a)


def _convolve_with_kernel(p: ResolventProblem) -> np.ndarray:
    """``(g * K)`` at every node.

    Writing ``K(s) = s^alpha phi(s)`` with smooth ``phi``, the integrand at
    node ``i`` is ``(x_i - y)^alpha`` times ``g(y) phi(x_i - y)``; the latter
    is interpolated linearly and integrated exactly against the power, which
    is the product-integration rule of ``I^{alpha+1}`` scaled by
    ``Gamma(alpha+1)``. ``phi`` only needs tabulating at multiples of ``h``.
    """
    alpha = p.order.alpha
    grid = p.grid
    n = grid.n
    a = alpha + 1.0
    shifts = np.arange(n) * grid.h
    phi = mittag_leffler(a, a, p.lam * shifts**a)
    lag = np.subtract.outer(np.arange(n), np.arange(n))
    phi_table = np.where(lag >= 0, phi[np.abs(lag)], 0.0)
    w = _integral_weights(n, a) * math.gamma(a)
    return np.einsum("ij,ij->i", w, phi_table * p.g.values[None, :])


def resolvent_solution(p: ResolventProblem) -> GridFunction:
    """Nodal values of the resolvent solution ``u`` for problem ``p``."""
    conv = _convolve_with_kernel(p)
    kernel = resolvent_kernel(p.order, p.lam, p.grid.nodes)
    a = conv[-1] / p.ml_at_one()
    u = a * kernel - conv
    u[0] = 0.0
    u[-1] = 0.0  # equals a*E(lam) - conv(1) up to rounding
    return GridFunction(p.grid, u)


def resolvent_residual(
    p: ResolventProblem,
    u,
    *,
    operator: OperatorMatrix | None = None,
    window: tuple[float, float] | None = None,
) -> float:
    """Max-norm of ``lambda u - A_h u - g`` over interior nodes.

    ``window`` restricts the norm to nodes with ``lo <= x <= hi``; the
    starting layer next to ``x = 0`` carries the ``x^{2 alpha + 1}`` part of
    the solution, where every local difference formula is only ``O(h^alpha)``.
    """
    if isinstance(u, GridFunction) and u.grid != p.grid:
        raise ConfigurationError("u and g live on different grids")
    u = as_grid_function(u)
    if u.grid != p.grid:
        raise ConfigurationError("u and g live on different grids")
    if operator is None:
        operator = assemble_operator(p.order, p.grid)
    elif operator.grid != p.grid:
        raise ConfigurationError("operator was assembled on a different grid")
    r = p.lam * u.values[1:-1] - operator.apply(u) - p.g.values[1:-1]
    if window is not None:
        x = p.grid.nodes[1:-1]
        lo, hi = window
        r = r[(x >= lo) & (x <= hi)]
    return float(np.max(np.abs(r))) if r.size else 0.0
