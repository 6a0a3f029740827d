"""scikit-learn style wrappers around the solvers.

Rows of ``X`` are functions sampled on a uniform grid of ``[0, 1]`` (or, for
the Stefan estimators, initial data sampled at ``x = p b``). Hyperparameters
are plain constructor arguments, so ``get_params`` / ``set_params`` and
``sklearn.base.clone`` work as usual.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import ConfigurationError, ValidationError
from .fracops import as_order, caputo_matrix, frac_integral_matrix
from .mbp import BoundaryTrajectory, StefanParams, scaled_cap_data, solve_mbp
from .numerics import Grid
from .stefan import solve_stefan

_KINDS = ("caputo", "integral")


def validate_samples(X, *, min_nodes: int = 3) -> np.ndarray:
    """2-D float array of finite samples with at least ``min_nodes`` columns."""
    X = check_array(X, dtype=float, ensure_2d=True, ensure_all_finite=True)
    if X.shape[1] < min_nodes:
        raise ValidationError(f"need at least {min_nodes} grid nodes per row, got {X.shape[1]}")
    return X


def validate_initial(u0, n: int) -> np.ndarray:
    """One row of initial data with ``n`` nodes."""
    arr = np.asarray(u0, dtype=float)
    if arr.ndim == 2 and arr.shape[0] == 1:
        arr = arr[0]
    if arr.shape != (n,):
        raise ValidationError(f"initial data must have shape ({n},), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("initial data contain non-finite values")
    return arr


class FractionalDerivativeTransformer(TransformerMixin, BaseEstimator):
    """Apply the discrete Caputo derivative or fractional integral row-wise."""

    def __init__(self, alpha: float = 0.5, kind: str = "caputo"):
        self.alpha = alpha
        self.kind = kind

    def fit(self, X, y=None):
        X = validate_samples(X)
        if self.kind not in _KINDS:
            raise ConfigurationError(f"kind must be one of {_KINDS}, got {self.kind!r}")
        order = as_order(self.alpha)
        grid = Grid(X.shape[1])
        if self.kind == "caputo":
            self.matrix_ = caputo_matrix(grid, order)
        else:
            self.matrix_ = frac_integral_matrix(grid, order.alpha)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "matrix_")
        X = validate_samples(X)
        if X.shape[1] != self.n_features_in_:
            raise ValidationError(f"expected {self.n_features_in_} nodes, got {X.shape[1]}")
        return X @ self.matrix_.T


class _StefanBase(RegressorMixin, BaseEstimator):
    def _params(self) -> StefanParams:
        return StefanParams(self.alpha, self.b, self.M, self.T, self.n, self.dt)

    def _initial(self, X, params):
        if X is None:
            return scaled_cap_data(params, self.theta)
        return validate_initial(X, params.n)

    def predict(self, t):
        """Front position at times ``t`` (linear interpolation)."""
        check_is_fitted(self, "front_")
        t = np.asarray(t, dtype=float)
        if np.any(t < 0) or np.any(t > self.front_.times[-1] + 1e-12):
            raise ValidationError("prediction times must lie in [0, T]")
        return self.front_.at(t)


class StefanFrontEstimator(_StefanBase):
    """Solve the free-boundary problem; ``fit(u0)`` then ``predict(t) -> s(t)``.

    With ``X=None`` the scaled-cap initial data of size ``theta`` are used.
    """

    def __init__(self, alpha=0.75, b=1.0, M=1.0, T=0.5, n=129, dt=0.005, theta=1.0, tol=1e-8, max_iters=50):
        self.alpha = alpha
        self.b = b
        self.M = M
        self.T = T
        self.n = n
        self.dt = dt
        self.theta = theta
        self.tol = tol
        self.max_iters = max_iters

    def fit(self, X=None, y=None):
        params = self._params()
        u0 = self._initial(X, params)
        self.solution_ = solve_stefan(params, u0, tol=self.tol, max_iters=self.max_iters)
        self.front_ = self.solution_.front.trajectory
        self.n_iter_ = self.solution_.iterations
        return self


class MovingBoundaryEstimator(_StefanBase):
    """Solve with a prescribed front ``s(t) = b + rate t``.

    ``predict`` returns the front; ``transform(t)`` returns the
    reference-domain field at the first time node not before each ``t``.
    """

    def __init__(self, alpha=0.75, b=1.0, M=1.0, T=0.5, n=129, dt=0.005, theta=1.0, rate=0.5):
        self.alpha = alpha
        self.b = b
        self.M = M
        self.T = T
        self.n = n
        self.dt = dt
        self.theta = theta
        self.rate = rate

    def fit(self, X=None, y=None):
        params = self._params()
        u0 = self._initial(X, params)
        traj = BoundaryTrajectory.from_function(params.times, lambda t: params.b + self.rate * t)
        self.field_ = solve_mbp(params, traj, u0)
        self.front_ = self.field_.trajectory
        return self

    def transform(self, t):
        check_is_fitted(self, "field_")
        t = np.atleast_1d(np.asarray(t, dtype=float))
        idx = np.clip(np.searchsorted(self.field_.times, t), 0, self.field_.times.size - 1)
        return self.field_.v[idx]
