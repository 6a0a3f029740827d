"""Refinement studies: error tables and empirical orders of accuracy."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import ValidationError
from .fracops import as_order, assemble_operator, caputo, frac_integral
from .numerics import Grid
from .resolvent import ResolventProblem, resolvent_residual, resolvent_solution

#: Errors below this are rounding noise; an order between two of them is undefined.
ROUNDOFF_FLOOR = 1e-12
REFINEMENT_SIZES = (65, 129, 257, 513)
#: Interior window for the resolvent residual, away from the starting layer.
RESOLVENT_WINDOW = (0.1, 1.0)


def empirical_orders(errors, ratio: float = 2.0, floor: float = ROUNDOFF_FLOOR) -> np.ndarray:
    """Orders ``log(e_k / e_{k+1}) / log(ratio)`` of successive refinements.

    A pair whose finer error sits at the rounding floor is reported as
    ``inf`` (exact to rounding) rather than as a meaningless ratio of noise.
    """
    e = np.asarray(errors, dtype=float)
    if e.ndim != 1 or e.size < 2:
        raise ValidationError("need at least two errors")
    out = np.empty(e.size - 1)
    for k in range(e.size - 1):
        if e[k + 1] <= floor:
            out[k] = np.inf
        else:
            out[k] = math.log(e[k] / e[k + 1]) / math.log(ratio)
    return out


def fitted_order(h, errors) -> float:
    """Least-squares slope of ``log e`` against ``log h``."""
    h = np.asarray(h, dtype=float)
    e = np.asarray(errors, dtype=float)
    if np.all(e <= ROUNDOFF_FLOOR):
        return math.inf
    return float(np.polyfit(np.log(h), np.log(e), 1)[0])


@dataclass(frozen=True)
class ErrorRow:
    label: str
    sizes: tuple[int, ...]
    errors: tuple[float, ...]

    @property
    def orders(self) -> np.ndarray:
        return empirical_orders(self.errors)

    @property
    def min_order(self) -> float:
        return float(np.min(self.orders))


def power_rule_errors(kind: str, alpha: float, beta: float, sizes=REFINEMENT_SIZES) -> ErrorRow:
    """Max-node errors of ``I^alpha x^beta`` or ``D^alpha x^beta``.

    The Caputo error skips node 0, whose value is a linear extrapolation.
    """
    order = as_order(alpha)
    errs = []
    for n in sizes:
        g = Grid(n)
        x = g.nodes
        f = g.sample(lambda t: t**beta)
        if kind == "integral":
            exact = math.gamma(beta + 1) / math.gamma(beta + 1 + alpha) * x ** (beta + alpha)
            err = np.abs(frac_integral(f, order).values - exact)
        elif kind == "caputo":
            exact = math.gamma(beta + 1) / math.gamma(beta + 1 - alpha) * x ** (beta - alpha)
            err = np.abs(caputo(f, order).values - exact)[1:]
        else:
            raise ValidationError(f"unknown power-rule kind {kind!r}")
        errs.append(float(err.max()))
    return ErrorRow(f"{kind} alpha={alpha:g} beta={beta:g}", tuple(sizes), tuple(errs))


def operator_kernel_errors(alpha: float, sizes=REFINEMENT_SIZES) -> ErrorRow:
    """Max-norm of the assembled operator applied to ``x^alpha``."""
    errs = []
    for n in sizes:
        g = Grid(n)
        A = assemble_operator(alpha, g)
        errs.append(float(np.max(np.abs(A.apply(g.nodes**alpha)))))
    return ErrorRow(f"operator alpha={alpha:g} x^alpha", tuple(sizes), tuple(errs))


def resolvent_errors(alpha: float, lam: float, g_func, label: str, sizes=REFINEMENT_SIZES, window=RESOLVENT_WINDOW) -> ErrorRow:
    errs = []
    for n in sizes:
        grid = Grid(n)
        p = ResolventProblem(alpha, lam, grid.sample(g_func))
        u = resolvent_solution(p)
        errs.append(resolvent_residual(p, u, window=window))
    return ErrorRow(f"resolvent alpha={alpha:g} lambda={lam:g} g={label}", tuple(sizes), tuple(errs))


def format_rows(rows) -> str:
    """Plain-text table: one line per row, errors then orders."""
    lines = []
    for r in rows:
        errs = " ".join(f"{e:.3e}" for e in r.errors)
        ords = " ".join("exact" if not np.isfinite(o) else f"{o:.3f}" for o in r.orders)
        lines.append(f"{r.label:<40s} n={list(r.sizes)} err=[{errs}] order=[{ords}]")
    return "\n".join(lines)
