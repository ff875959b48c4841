"""scikit-learn style front end to the residual CDF estimator."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .estimators import (GRID_PREDICTIONS, cdf_plugin, cdf_residual, invert_quantile, plugin_curve,
                         residual_curve)
from .regression import ScaleFunction, fit_linear
from .sampling import EXTERNAL_WEIGHTS, SRSWOR, ConvenienceSample, ProbabilitySample


class ResidualCDFEstimator(RegressorMixin, BaseEstimator):
    """Population CDF from a weighted probability sample without responses.

    ``fit`` learns a linear working model on the convenience sample.
    ``cdf`` then averages the residual eCDF over the probability sample,
    weighted by its design weights and divided by ``population_size``.

    Parameters
    ----------
    population_size : int
        Known N.
    nu : str or ScaleFunction, default "constant"
        Scale function, e.g. "constant" or "power:0:0.5".
    design : {"srswor", "external"}
        Design of the probability sample; informational for variance routines.
    residual_grid : {"predictions", "union"}
        Candidate thresholds searched by ``quantile(kind="residual")``.
    """

    def __init__(self, population_size=None, nu="constant", design=SRSWOR,
                 residual_grid=GRID_PREDICTIONS):
        self.population_size = population_size
        self.nu = nu
        self.design = design
        self.residual_grid = residual_grid

    def _scale(self):
        return self.nu if isinstance(self.nu, ScaleFunction) else ScaleFunction.parse(self.nu)

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        if self.design not in (SRSWOR, EXTERNAL_WEIGHTS):
            raise ValueError(f"unknown design {self.design!r}")
        self.model_ = fit_linear(X, y, self._scale())
        self.sample_b_ = ConvenienceSample(X, y)
        self.coef_ = self.model_.beta[1:].copy()
        self.intercept_ = float(self.model_.beta[0])
        self.residuals_ = self.model_.residuals_sorted
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        return self.model_.predict(X)

    def _sample_a(self, X_a, weights) -> ProbabilitySample:
        check_is_fitted(self, "model_")
        X_a = check_array(X_a, dtype=np.float64)
        if X_a.shape[1] != self.n_features_in_:
            raise ValueError(f"X_a has {X_a.shape[1]} features, expected {self.n_features_in_}")
        w = check_array(weights, ensure_2d=False, dtype=np.float64)
        if self.population_size is None:
            raise ValueError("population_size must be set before estimating a CDF")
        return ProbabilitySample(X_a, w, int(self.population_size), design=self.design)

    def cdf(self, t, X_a, weights):
        """Residual-based estimate of F_N at each threshold in ``t``."""
        return cdf_residual(self._sample_a(X_a, weights), self.model_, t)

    def plugin_cdf(self, t, X_a, weights):
        """Design-weighted eCDF of the predictions for sample A."""
        return cdf_plugin(self._sample_a(X_a, weights), self.model_, t)

    def quantile(self, alpha, X_a, weights, kind="residual"):
        """Smallest candidate threshold whose estimated CDF reaches ``alpha``.

        Returns None for levels the curve never reaches.
        """
        a = self._sample_a(X_a, weights)
        if kind == "residual":
            curve = residual_curve(a, self.model_, self.sample_b_, grid_kind=self.residual_grid)
        elif kind == "plugin":
            curve = plugin_curve(a, self.model_)
        else:
            raise ValueError(f"unknown quantile kind {kind!r}")
        alphas = np.atleast_1d(alpha)
        out = [invert_quantile(curve, float(al)) for al in alphas]
        return out[0] if np.ndim(alpha) == 0 else out
