"""CDF and quantile estimators for integrated probability/convenience samples.

Four CDF estimators are provided, all evaluated at thresholds ``t``:

* ``cdf_ht``       design-weighted eCDF of sample A (needs A's response)
* ``cdf_naive``    unweighted eCDF of sample B
* ``cdf_plugin``   design-weighted eCDF of A's predictions m(x_i)
* ``cdf_residual`` design-weighted average over A of the B-residual eCDF
                   evaluated at (t - m(x_i)) / nu(x_i)

All of them divide by the known population size N, never by the sum of
weights. Quantiles invert a curve on a finite grid of candidate thresholds
and return None when the curve never reaches the requested level.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.stats import norm

from .regression import FittedModel
from .sampling import ConvenienceSample, ProbabilitySample

HT, NAIVE, PLUGIN, RESIDUAL = "HT", "Naive", "PlugIn", "Residual"
GRID_PREDICTIONS, GRID_UNION = "predictions", "union"
RESIDUAL_GRIDS = (GRID_PREDICTIONS, GRID_UNION)
ESTIMATORS = (HT, NAIVE, PLUGIN, RESIDUAL)

_CHUNK = 1 << 22  # matrix entries per evaluation block


def _as_thresholds(t) -> tuple[np.ndarray, bool]:
    arr = np.asarray(t, dtype=np.float64)
    return np.atleast_1d(arr).ravel(), arr.ndim == 0


def _finish(values: np.ndarray, scalar: bool):
    return float(values[0]) if scalar else values


def _weighted_rows(block: np.ndarray, weight: np.ndarray) -> np.ndarray:
    # Row sums are taken one contiguous row at a time so that a threshold
    # evaluated alone or inside a batch gives the same floating-point value.
    return (block * weight).sum(axis=1)


def residual_ecdf(model: FittedModel | np.ndarray, r):
    """Share of fitted residuals at or below ``r`` (binary search)."""
    pool = model.residuals_sorted if isinstance(model, FittedModel) else np.asarray(model)
    if pool.size == 0:
        raise ValueError("residual pool is empty")
    rr, scalar = _as_thresholds(r)
    return _finish(np.searchsorted(pool, rr, side="right") / pool.size, scalar)


def _indicator_share(values: np.ndarray, weight: np.ndarray, t: np.ndarray, denom: float):
    out = np.empty(t.size)
    step = max(1, _CHUNK // max(values.size, 1))
    for lo in range(0, t.size, step):
        block = (values[None, :] <= t[lo:lo + step, None]).astype(np.float64)
        out[lo:lo + step] = _weighted_rows(block, weight) / denom
    return out


def cdf_ht(a: ProbabilitySample, t):
    """(1/N) sum_A d_i 1(y_i <= t)."""
    if a.y is None:
        raise ValueError("the Horvitz-Thompson estimator needs responses on sample A")
    tt, scalar = _as_thresholds(t)
    return _finish(_indicator_share(a.y, a.weight, tt, a.pop_size), scalar)


def cdf_naive(b: ConvenienceSample, t):
    """(1/n_B) sum_B 1(y_j <= t)."""
    tt, scalar = _as_thresholds(t)
    ys = np.sort(b.y)
    return _finish(np.searchsorted(ys, tt, side="right") / ys.size, scalar)


def cdf_plugin(a: ProbabilitySample, model: FittedModel, t):
    """(1/N) sum_A d_i 1(m(x_i) <= t)."""
    tt, scalar = _as_thresholds(t)
    return _finish(_indicator_share(model.predict(a.x), a.weight, tt, a.pop_size), scalar)


class _ResidualKernel:
    """Precomputed pieces of the residual estimator for one (A, model) pair."""

    def __init__(self, yhat, scale, weight, pool, pop_size):
        self.yhat, self.scale, self.weight = yhat, scale, weight
        self.pool = pool
        self.pop_size = float(pop_size)

    @classmethod
    def build(cls, a: ProbabilitySample, model: FittedModel, weight=None):
        if model.n_residuals == 0:
            raise ValueError("residual pool is empty")
        return cls(model.predict(a.x), model.scale(a.x),
                   a.weight if weight is None else weight, model.residuals_sorted, a.pop_size)

    def counts(self, t: np.ndarray) -> np.ndarray:
        r = (t[:, None] - self.yhat[None, :]) / self.scale[None, :]
        return np.searchsorted(self.pool, r.ravel(), side="right").reshape(r.shape)

    def values(self, t: np.ndarray) -> np.ndarray:
        out = np.empty(t.size)
        step = max(1, _CHUNK // max(self.yhat.size, 1))
        for lo in range(0, t.size, step):
            g = self.counts(t[lo:lo + step]) / self.pool.size
            out[lo:lo + step] = _weighted_rows(g, self.weight) / self.pop_size
        return out

    def g_values(self, t: float) -> np.ndarray:
        """G-hat(R_i(t)) for every unit of A."""
        return self.counts(np.array([t]))[0] / self.pool.size


def cdf_residual(a: ProbabilitySample, model: FittedModel, t):
    """(1/N) sum_A d_i G-hat((t - m(x_i)) / nu(x_i)).

    Cost per threshold is O(n_A log n_B) after the residuals are sorted.
    """
    tt, scalar = _as_thresholds(t)
    return _finish(_ResidualKernel.build(a, model).values(tt), scalar)


def _first_at_least(values: np.ndarray, level: float) -> int | None:
    k = int(np.searchsorted(values, level, side="left"))
    return k if k < values.size else None


@dataclass(frozen=True, eq=False)
class CdfCurve:
    """An estimated CDF tabulated on an ascending grid of thresholds."""

    grid: np.ndarray
    value: np.ndarray
    estimator_tag: str
    w_max: float = 1.0

    def __post_init__(self):
        if self.grid.size != self.value.size:
            raise ValueError("grid and value must have equal length")
        if self.grid.size == 0:
            raise ValueError("curve grid is empty")

    def first_index(self, level: float) -> int | None:
        """Smallest grid index whose value is >= level, or None."""
        return _first_at_least(self.value, level)

    def first_index_many(self, levels) -> list[int | None]:
        return [self.first_index(lv) for lv in np.atleast_1d(levels)]

    def __call__(self, t):
        """Step-function lookup: value at the largest grid point <= t (0 below the grid)."""
        tt, scalar = _as_thresholds(t)
        k = np.searchsorted(self.grid, tt, side="right")
        out = np.where(k > 0, self.value[np.maximum(k - 1, 0)], 0.0)
        return _finish(out, scalar)

    @property
    def max_value(self) -> float:
        return float(self.value[-1])

    def to_rows(self):
        return [(self.estimator_tag, float(g), float(v)) for g, v in zip(self.grid, self.value)]


class ResidualCurve:
    """The residual estimator on a grid, evaluated lazily.

    Quantile searches bisect the grid (the curve is nondecreasing), so a
    quantile costs O(log(grid) * n_A * log n_B) instead of a full tabulation.
    """

    estimator_tag = RESIDUAL

    def __init__(self, a: ProbabilitySample, model: FittedModel, grid, *, weight=None,
                 kernel: _ResidualKernel | None = None):
        self.grid = np.asarray(grid, dtype=np.float64)
        if self.grid.size == 0:
            raise ValueError("curve grid is empty")
        self._kernel = kernel or _ResidualKernel.build(a, model, weight)
        self.w_max = float(self._kernel.weight.sum()) / a.pop_size

    def values_at(self, idx) -> np.ndarray:
        return self._kernel.values(self.grid[np.asarray(idx)])

    def first_index_many(self, levels) -> list[int | None]:
        levels = np.atleast_1d(np.asarray(levels, dtype=np.float64))
        m = self.grid.size
        top = self.values_at([m - 1])[0]
        lo = np.zeros(levels.size, dtype=np.int64)
        hi = np.full(levels.size, m - 1, dtype=np.int64)
        reach = levels <= top
        # Invariant: the answer lies in [lo, hi] and value[hi] >= level.
        while True:
            active = reach & (lo < hi)
            if not active.any():
                break
            mid = (lo + hi) // 2
            vals = self.values_at(mid[active])
            ok = vals >= levels[active]
            act = np.flatnonzero(active)
            hi[act[ok]] = mid[act[ok]]
            lo[act[~ok]] = mid[act[~ok]] + 1
        return [int(h) if r else None for h, r in zip(hi, reach)]

    def first_index(self, level: float) -> int | None:
        return self.first_index_many([level])[0]

    def __call__(self, t):
        tt, scalar = _as_thresholds(t)
        return _finish(self._kernel.values(tt), scalar)

    @property
    def max_value(self) -> float:
        return float(self.values_at([self.grid.size - 1])[0])

    def materialize(self) -> CdfCurve:
        return CdfCurve(self.grid, self._kernel.values(self.grid), RESIDUAL, self.w_max)


def ht_curve(a: ProbabilitySample) -> CdfCurve:
    grid = np.unique(a.y)
    return CdfCurve(grid, cdf_ht(a, grid), HT, float(a.weight.sum()) / a.pop_size)


def naive_curve(b: ConvenienceSample) -> CdfCurve:
    grid = np.unique(b.y)
    return CdfCurve(grid, cdf_naive(b, grid), NAIVE, 1.0)


def plugin_curve(a: ProbabilitySample, model: FittedModel) -> CdfCurve:
    grid = np.unique(model.predict(a.x))
    return CdfCurve(grid, cdf_plugin(a, model, grid), PLUGIN, float(a.weight.sum()) / a.pop_size)


def residual_grid(a: ProbabilitySample, model: FittedModel, b: ConvenienceSample | None = None,
                  kind: str = GRID_PREDICTIONS) -> np.ndarray:
    """Candidate thresholds for quantile search.

    "predictions" searches A's predicted values only, so the curve can stop
    short of 1 when no unit's residual eCDF saturates. "union" adds B's
    observed responses.
    """
    yhat = model.predict(a.x)
    if kind == GRID_PREDICTIONS:
        return np.unique(yhat)
    if kind == GRID_UNION:
        if b is None:
            raise ValueError("the union grid needs sample B")
        return np.unique(np.concatenate([b.y, yhat]))
    raise ValueError(f"unknown residual grid {kind!r}; expected one of {RESIDUAL_GRIDS}")


def residual_curve(a: ProbabilitySample, model: FittedModel, b: ConvenienceSample | None = None,
                   grid=None, lazy: bool = True, grid_kind: str = GRID_PREDICTIONS):
    if grid is None:
        grid = residual_grid(a, model, b, grid_kind)
    curve = ResidualCurve(a, model, grid)
    return curve if lazy else curve.materialize()


def invert_quantile(curve, alpha: float) -> float | None:
    """Smallest grid threshold whose estimate reaches ``alpha``; None if none does."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    k = curve.first_index(alpha)
    return None if k is None else float(curve.grid[k])


def z_value(gamma: float) -> float:
    """Two-sided standard normal critical value for confidence level ``gamma``."""
    if not 0.0 < gamma < 1.0:
        raise ValueError("confidence level must lie in (0, 1)")
    return float(norm.ppf(1.0 - (1.0 - gamma) / 2.0))


class WoodruffInterval(NamedTuple):
    lower: float
    upper: float
    lower_saturated: bool = False
    upper_saturated: bool = False


def woodruff_interval(curve, alpha: float, se_at_quantile: float, gamma: float = 0.90,
                      z: float | None = None) -> WoodruffInterval:
    """Quantile interval from inverting the CDF band alpha -/+ z * se.

    A bound whose level exceeds the curve's maximum saturates at the largest
    grid point and is flagged.
    """
    if se_at_quantile < 0 or not np.isfinite(se_at_quantile):
        raise ValueError("standard error must be finite and non-negative")
    z = z_value(gamma) if z is None else z
    lo_k, up_k = curve.first_index_many([alpha - z * se_at_quantile, alpha + z * se_at_quantile])
    last = curve.grid.size - 1
    lower = float(curve.grid[last if lo_k is None else lo_k])
    upper = float(curve.grid[last if up_k is None else up_k])
    return WoodruffInterval(lower, upper, lo_k is None, up_k is None)
