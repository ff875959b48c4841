"""Variance estimation for the residual CDF estimator and its quantiles.

Two routes:

* asymptotic: the double-sum estimator V1 + V2 over pairs of sample-A units,
  with an SRS shortcut ((1 - f) / n_A) * s^2 of the G-hat values;
* bootstrap: replicate weights for A paired with a with-replacement
  resample of B, refitting the working model on every replicate.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _rng
from ._parallel import chunked, ordered_map
from .estimators import (GRID_PREDICTIONS, GRID_UNION, NAIVE, PLUGIN, RESIDUAL, RESIDUAL_GRIDS,
                         ResidualCurve, _ResidualKernel, cdf_naive,
                         cdf_plugin, cdf_residual, invert_quantile, naive_curve, plugin_curve,
                         residual_curve, woodruff_interval, z_value)
from .exceptions import EstimationError
from .regression import FittedModel, ScaleFunction, fit_linear
from .sampling import ConvenienceSample, JointInclusion, ProbabilitySample, SRSWOR

ASYMP_GENERAL, ASYMP_SRS, BOOTSTRAP = "AsympGeneral", "AsympSRS", "Bootstrap"
RAO_WU, WITH_REPLACEMENT, FIXED = "rao_wu", "with_replacement", "fixed"
REPLICATE_METHODS = (RAO_WU, WITH_REPLACEMENT, FIXED)

DOUBLE_SUM_WARN = 20_000
MAX_DROP_SHARE = 0.10


@dataclass(frozen=True)
class VarianceReport:
    v1: float
    v2: float
    total: float
    method: str
    replicates_used: int = 0
    dropped: int = 0
    details: dict = field(default_factory=dict)


def double_sum_components(g, joint, pop_size: int, n_b: int) -> tuple[float, float]:
    """V1 and V2 of the double-sum estimator for given G-hat values.

    ``joint`` is the n_A x n_A matrix of pi_hi with first-order pi_h on the
    diagonal. G-hat(min(R_h, R_i)) equals min(G-hat(R_h), G-hat(R_i))
    because G-hat is nondecreasing, so no extra residual search is needed.
    """
    g = np.asarray(g, dtype=np.float64)
    joint = np.asarray(joint, dtype=np.float64)
    if joint.shape != (g.size, g.size):
        raise ValueError("joint inclusion matrix does not match the number of G values")
    if np.any(joint <= 0):
        raise ValueError("joint inclusion probabilities must be positive for the double-sum estimator")
    if g.size > DOUBLE_SUM_WARN:
        warnings.warn(f"double-sum variance over {g.size} units is O(n^2) in time and memory",
                      RuntimeWarning, stacklevel=2)
    pi = np.diag(joint)
    prod = np.outer(pi, pi)
    coef1 = (joint / prod - 1.0) / joint
    v1 = float(g @ coef1 @ g) / pop_size**2
    cross = np.minimum.outer(g, g) - np.outer(g, g)
    v2 = float(np.sum(cross / prod)) / (n_b * pop_size**2)
    return v1, v2


def srs_component(g, pop_size: int) -> float:
    """((1 - f) / n) times the sample variance (divisor n - 1) of G-hat."""
    g = np.asarray(g, dtype=np.float64)
    n = g.size
    if n < 2:
        raise ValueError("the SRS variance needs at least two sampled units")
    return (1.0 - n / pop_size) / n * float(np.var(g, ddof=1))


def g_hat_values(a: ProbabilitySample, model: FittedModel, t: float) -> np.ndarray:
    return _ResidualKernel.build(a, model).g_values(float(t))


def var_cdf_asymptotic(a: ProbabilitySample, model: FittedModel, t: float,
                       joint: JointInclusion) -> VarianceReport:
    g = g_hat_values(a, model, t)
    v1, v2 = double_sum_components(g, joint.matrix(), a.pop_size, model.n_residuals)
    return VarianceReport(v1, v2, v1 + v2, ASYMP_GENERAL)


def var_cdf_srs(a: ProbabilitySample, model: FittedModel, t: float) -> VarianceReport:
    """SRS shortcut of V1; V2 is reported as zero."""
    if a.design != SRSWOR:
        raise ValueError("the SRS variance formula needs an SRS design")
    v1 = srs_component(g_hat_values(a, model, t), a.pop_size)
    return VarianceReport(v1, 0.0, v1, ASYMP_SRS)


def var_quantile_woodruff(lower: float, upper: float, gamma: float = 0.90,
                          z: float | None = None) -> float:
    """((upper - lower) / (2 z))^2."""
    if upper < lower:
        raise ValueError("upper bound must not be below the lower bound")
    z = z_value(gamma) if z is None else z
    return ((upper - lower) / (2.0 * z)) ** 2


# --------------------------------------------------------------------------- bootstrap


def replicate_weights(a: ProbabilitySample, rng: np.random.Generator, method: str = RAO_WU):
    """One set of replicate weights for sample A.

    ``rao_wu`` draws n_A - 1 units with replacement and rescales by
    n_A / (n_A - 1); ``with_replacement`` draws n_A units; ``fixed`` keeps
    the design weights.
    """
    n = a.size
    if method == FIXED:
        return a.weight
    if method == WITH_REPLACEMENT:
        counts = np.bincount(rng.integers(0, n, n), minlength=n)
        return a.weight * counts
    if method == RAO_WU:
        if n < 2:
            raise ValueError("Rao-Wu replicate weights need at least two units")
        counts = np.bincount(rng.integers(0, n, n - 1), minlength=n)
        return a.weight * (counts * (n / (n - 1)))
    raise ValueError(f"unknown replicate weight method {method!r}")


def _step_values(values, weight, denom):
    order = np.argsort(values, kind="stable")
    v, w = values[order], weight[order]
    grid, last = np.unique(v, return_index=True)
    cum = np.cumsum(w)
    ends = np.append(last[1:], v.size) - 1
    return grid, cum[ends] / denom


def _step_eval(grid, cum, t):
    k = np.searchsorted(grid, t, side="right")
    return np.where(k > 0, cum[np.maximum(k - 1, 0)], 0.0)


def _step_quantile_value(grid, cum, alphas):
    k = np.searchsorted(cum, alphas, side="left")
    return np.where(k < cum.size, cum[np.minimum(k, cum.size - 1)], np.nan)


@dataclass
class _Problem:
    a: ProbabilitySample
    b: ConvenienceSample
    ts: np.ndarray
    alphas: np.ndarray
    nu: ScaleFunction
    method: str
    estimators: tuple
    seed: int
    stream: tuple
    grid_kind: str = GRID_PREDICTIONS


def _one_replicate(prob: _Problem, rep: int):
    rng = _rng.substream(prob.seed, "bootstrap", *prob.stream, rep)
    w = replicate_weights(prob.a, rng, prob.method)
    n_b = prob.b.size
    counts_b = np.bincount(rng.integers(0, n_b, n_b), minlength=n_b)
    out = {}
    try:
        model = fit_linear(prob.b.x, prob.b.y, prob.nu, counts=counts_b)
    except (EstimationError, ValueError):
        return None
    keep = w > 0
    a_rep = ProbabilitySample(x=prob.a.x[keep], weight=w[keep], pop_size=prob.a.pop_size,
                              design=prob.a.design)
    if RESIDUAL in prob.estimators:
        kernel = _ResidualKernel.build(a_rep, model)
        cdf = kernel.values(prob.ts)
        q = np.full(prob.alphas.size, np.nan)
        if prob.alphas.size:
            grid = np.unique(kernel.yhat)
            if prob.grid_kind == GRID_UNION:
                grid = np.unique(np.concatenate([prob.b.y[counts_b > 0], grid]))
            curve = ResidualCurve(a_rep, model, grid, kernel=kernel)
            idx = curve.first_index_many(prob.alphas)
            hit = [k for k in idx if k is not None]
            vals = curve.values_at(hit) if hit else np.empty(0)
            it = iter(vals)
            q = np.array([next(it) if k is not None else np.nan for k in idx])
        out[RESIDUAL] = (cdf, q)
    if PLUGIN in prob.estimators:
        grid, cum = _step_values(model.predict(a_rep.x), a_rep.weight, a_rep.pop_size)
        out[PLUGIN] = (_step_eval(grid, cum, prob.ts), _step_quantile_value(grid, cum, prob.alphas))
    if NAIVE in prob.estimators:
        grid, cum = _step_values(prob.b.y, counts_b.astype(np.float64), n_b)
        out[NAIVE] = (_step_eval(grid, cum, prob.ts), _step_quantile_value(grid, cum, prob.alphas))
    return out


def _run_chunk(args):
    prob, reps = args
    return [_one_replicate(prob, r) for r in reps]


@dataclass
class BootstrapResult:
    """Replicate estimates and the original-sample quantities they are compared to."""

    estimators: tuple
    ts: np.ndarray
    alphas: np.ndarray
    replicate_cdf: dict          # estimator -> (L_used, len(ts))
    replicate_qcdf: dict         # estimator -> (L_used, len(alphas)); NaN where T-hat is absent
    original_cdf: dict           # estimator -> len(ts)
    original_quantile: dict      # estimator -> list of float | None
    original_qcdf: dict          # estimator -> len(alphas)
    curves: dict
    requested: int
    dropped: int
    method: str
    gamma: float

    def cdf_report(self, estimator: str = RESIDUAL, k: int = 0) -> VarianceReport:
        reps = self.replicate_cdf[estimator][:, k]
        v = float(np.mean((reps - self.original_cdf[estimator][k]) ** 2))
        return VarianceReport(v, 0.0, v, BOOTSTRAP, replicates_used=reps.size, dropped=self.dropped,
                              details={"target": "cdf", "t": float(self.ts[k]),
                                       "estimate": float(self.original_cdf[estimator][k]),
                                       "replicate_method": self.method})

    def quantile_report(self, estimator: str = RESIDUAL, k: int = 0) -> VarianceReport:
        alpha = float(self.alphas[k])
        t_hat = self.original_quantile[estimator][k]
        details = {"target": "quantile", "alpha": alpha, "estimate": t_hat,
                   "replicate_method": self.method}
        if t_hat is None:
            details["absent"] = True
            return VarianceReport(np.nan, 0.0, np.nan, BOOTSTRAP, 0, self.dropped, details)
        reps = self.replicate_qcdf[estimator][:, k]
        present = reps[~np.isnan(reps)]
        if present.size == 0:
            details["absent_replicates"] = int(reps.size)
            return VarianceReport(np.nan, 0.0, np.nan, BOOTSTRAP, 0, self.dropped, details)
        v_cdf = float(np.mean((present - self.original_qcdf[estimator][k]) ** 2))
        iv = woodruff_interval(self.curves[estimator], alpha, np.sqrt(v_cdf), self.gamma)
        v = var_quantile_woodruff(iv.lower, iv.upper, self.gamma)
        details.update(se_cdf_at_quantile=float(np.sqrt(v_cdf)), lower=iv.lower, upper=iv.upper,
                       lower_saturated=iv.lower_saturated, upper_saturated=iv.upper_saturated,
                       absent_replicates=int(reps.size - present.size))
        return VarianceReport(v, 0.0, v, BOOTSTRAP, int(present.size), self.dropped, details)


def bootstrap(a: ProbabilitySample, b: ConvenienceSample, *, ts=(), alphas=(), l: int = 750,
              seed: int = 0, stream=(), method: str = RAO_WU, nu: ScaleFunction | None = None,
              estimators=(RESIDUAL,), gamma: float = 0.90, model: FittedModel | None = None,
              curves: dict | None = None, threads: int = 1,
              grid_kind: str = GRID_PREDICTIONS) -> BootstrapResult:
    """Run ``l`` bootstrap replicates for several CDF and quantile targets at once.

    Replicate ``r`` draws from substream ``(seed, "bootstrap", *stream, r)``,
    so results do not depend on ``threads``. Replicates whose refit fails
    are dropped; more than 10% dropped raises EstimationError.
    """
    if l < 2:
        raise ValueError("the bootstrap needs at least two replicates")
    if method not in REPLICATE_METHODS:
        raise ValueError(f"unknown replicate weight method {method!r}")
    nu = nu or (model.nu if model is not None else ScaleFunction())
    ts = np.atleast_1d(np.asarray(ts, dtype=np.float64))
    alphas = np.atleast_1d(np.asarray(alphas, dtype=np.float64))
    estimators = tuple(estimators)
    model = model or fit_linear(b.x, b.y, nu)

    curves = dict(curves or {})
    original_cdf, original_q, original_qcdf = {}, {}, {}
    for est in estimators:
        if est == RESIDUAL:
            curves.setdefault(est, residual_curve(a, model, b, grid_kind=grid_kind))
            original_cdf[est] = cdf_residual(a, model, ts)
        elif est == PLUGIN:
            curves.setdefault(est, plugin_curve(a, model))
            original_cdf[est] = cdf_plugin(a, model, ts)
        elif est == NAIVE:
            curves.setdefault(est, naive_curve(b))
            original_cdf[est] = cdf_naive(b, ts)
        else:
            raise ValueError(f"the bootstrap does not support estimator {est!r}")
        qs = [invert_quantile(curves[est], al) for al in alphas]
        original_q[est] = qs
        original_qcdf[est] = np.array([np.nan if q is None else curves[est](q) for q in qs])

    if grid_kind not in RESIDUAL_GRIDS:
        raise ValueError(f"unknown residual grid {grid_kind!r}")
    prob = _Problem(a, b, ts, alphas, nu, method, estimators, seed, tuple(stream), grid_kind)
    parts = ordered_map(_run_chunk, [(prob, r) for r in chunked(l, threads)], threads)
    results = [res for part in parts for res in part]
    ok = [res for res in results if res is not None]
    dropped = l - len(ok)
    if dropped > MAX_DROP_SHARE * l:
        raise EstimationError(f"{dropped} of {l} bootstrap refits failed")

    rep_cdf = {e: np.array([res[e][0] for res in ok]).reshape(len(ok), ts.size) for e in estimators}
    rep_q = {e: np.array([res[e][1] for res in ok]).reshape(len(ok), alphas.size) for e in estimators}
    return BootstrapResult(estimators, ts, alphas, rep_cdf, rep_q, original_cdf, original_q,
                           original_qcdf, curves, l, dropped, method, gamma)


def bootstrap_variance(a: ProbabilitySample, b: ConvenienceSample, target, l: int = 750,
                       seed: int = 0, **kwargs) -> VarianceReport:
    """Bootstrap variance for a single target.

    ``target`` is ``("cdf", t)`` or ``("quantile", alpha)``. For a quantile
    the replicate CDF values at their own replicate quantiles give an SE,
    which sets a Woodruff interval on the original curve; the returned total
    is ((upper - lower) / (2 z))^2.
    """
    kind, value = target
    if kind == "cdf":
        return bootstrap(a, b, ts=[value], l=l, seed=seed, **kwargs).cdf_report(RESIDUAL, 0)
    if kind == "quantile":
        return bootstrap(a, b, alphas=[value], l=l, seed=seed, **kwargs).quantile_report(RESIDUAL, 0)
    raise ValueError(f"unknown bootstrap target {kind!r}")
