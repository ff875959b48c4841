"""Monte Carlo harness: population, samples, fits, estimates and metrics.

One population is generated per run. Every replicate draws a fresh SRS A
and, for each (mechanism, n_B) cell, a fresh convenience sample B; all
estimators are evaluated at the population quantiles T_N(alpha). Variance
methods are evaluated for the residual estimator only.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import pandas as pd

from . import __version__
from ._parallel import chunked, ordered_map
from .estimators import (ESTIMATORS, GRID_PREDICTIONS, HT, NAIVE, PLUGIN, RESIDUAL,
                         RESIDUAL_GRIDS, cdf_ht, cdf_naive,
                         cdf_plugin, cdf_residual, ht_curve, naive_curve,
                         plugin_curve, residual_curve, woodruff_interval, z_value)
from .exceptions import ConfigError, EstimationError, InvariantViolation, SimulationError
from .population import MODELS, FinitePopulation, finite_cdf, finite_quantile, generate_population
from .regression import ScaleFunction, fit_linear
from .sampling import (MAR, MNAR, ConvenienceSample, draw_convenience, draw_srs_wor,
                       inclusion_probabilities, joint_inclusion)
from .variance import (REPLICATE_METHODS, bootstrap, double_sum_components, g_hat_values,
                       srs_component, var_quantile_woodruff)

SCHEMA_VERSION = "1"
PERCENTILES = (0.01, 0.10, 0.25, 0.50, 0.75, 0.90, 0.99)
ASYMP_SRS, ASYMP, BOOT = "asymp_srs", "asymp", "bootstrap"
VARIANCE_METHODS = (ASYMP_SRS, ASYMP, BOOT)
MAX_FAIL_SHARE = 0.05


@dataclass(frozen=True)
class SimConfig:
    model_id: str = "xi1"
    n_pop: int = 10_000
    n_a: int = 500
    n_b_multipliers: tuple = (1, 10, 20)
    mechanisms: tuple = (MAR, MNAR)
    percentiles: tuple = PERCENTILES
    n_sim: int = 200
    estimators: tuple = ESTIMATORS
    variance_methods: tuple = ()
    variance_percentiles: tuple | None = None
    bootstrap_l: int = 750
    replicate_method: str = "rao_wu"
    gamma: float = 0.90
    upper_frac: float = 0.85
    nu: str = "constant"
    residual_grid: str = GRID_PREDICTIONS
    seed: int = 0

    def __post_init__(self):
        for name in ("n_b_multipliers", "mechanisms", "percentiles", "estimators",
                     "variance_methods"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.variance_percentiles is not None:
            object.__setattr__(self, "variance_percentiles", tuple(self.variance_percentiles))
        self.validate()

    def validate(self):
        if self.model_id not in MODELS:
            raise ConfigError(f"unknown model {self.model_id!r}; expected one of {MODELS}")
        if not 2 <= self.n_a <= self.n_pop:
            raise ConfigError("need 2 <= n_a <= n_pop")
        if self.n_sim < 1:
            raise ConfigError("n_sim must be at least 1")
        if not self.n_b_multipliers or any(m <= 0 for m in self.n_b_multipliers):
            raise ConfigError("n_b_multipliers must be positive")
        if not self.percentiles or any(not 0.0 < a < 1.0 for a in self.percentiles):
            raise ConfigError("every percentile must lie in (0, 1)")
        if any(a not in self.percentiles for a in self.variance_percentiles or ()):
            raise ConfigError("variance_percentiles must be a subset of percentiles")
        unknown = set(self.mechanisms) - {MAR, MNAR}
        if unknown or not self.mechanisms:
            raise ConfigError(f"mechanisms must be a non-empty subset of MAR, MNAR; got {sorted(unknown)}")
        if set(self.estimators) - set(ESTIMATORS) or not self.estimators:
            raise ConfigError(f"estimators must be a non-empty subset of {ESTIMATORS}")
        if set(self.variance_methods) - set(VARIANCE_METHODS):
            raise ConfigError(f"variance methods must be a subset of {VARIANCE_METHODS}")
        if self.variance_methods and RESIDUAL not in self.estimators:
            raise ConfigError("variance methods need the Residual estimator")
        if self.bootstrap_l < 2:
            raise ConfigError("bootstrap_l must be at least 2")
        if self.replicate_method not in REPLICATE_METHODS:
            raise ConfigError(f"replicate_method must be one of {REPLICATE_METHODS}")
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError("gamma must lie in (0, 1)")
        if not 0.0 < self.upper_frac < 1.0:
            raise ConfigError("upper_frac must lie in (0, 1)")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        if self.residual_grid not in RESIDUAL_GRIDS:
            raise ConfigError(f"residual_grid must be one of {RESIDUAL_GRIDS}")
        try:
            ScaleFunction.parse(self.nu)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def n_b_values(self) -> tuple[int, ...]:
        return tuple(int(m * self.n_a) for m in self.n_b_multipliers)

    @property
    def var_alphas(self) -> tuple:
        return self.percentiles if self.variance_percentiles is None else self.variance_percentiles

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    def hash(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]


PRESETS = {
    "desk": SimConfig(),
    "paper": SimConfig(n_pop=100_000, n_a=1000, n_sim=1500),
    "paper-xi1": SimConfig(model_id="xi1", n_pop=100_000, n_a=1000, n_sim=1500),
}


def preset(name: str, **overrides) -> SimConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; expected one of {sorted(PRESETS)}")
    return replace(PRESETS[name], **overrides)


# --------------------------------------------------------------------------- metrics


def rmser(mse_est: float, mse_ht: float) -> float:
    """sqrt(mse_est / mse_ht)."""
    if mse_est < 0:
        raise ValueError("mse_est must be non-negative")
    if not mse_ht > 0:
        raise ValueError("RMSER is undefined when the reference MSE is zero")
    return math.sqrt(mse_est / mse_ht)


def coverage_stats(intervals, truth: float) -> tuple[float, float]:
    """(percent of intervals containing ``truth``, mean interval length)."""
    iv = np.asarray(intervals, dtype=np.float64).reshape(-1, 2)
    if iv.shape[0] == 0:
        raise ValueError("no intervals given")
    hit = (iv[:, 0] <= truth) & (truth <= iv[:, 1])
    return 100.0 * float(hit.mean()), float(np.mean(iv[:, 1] - iv[:, 0]))


def relative_bias_pct(mean_vhat: float, v_mc: float) -> float:
    if not v_mc > 0:
        raise ValueError("relative bias is undefined when the Monte Carlo variance is zero")
    return 100.0 * (mean_vhat - v_mc) / v_mc


def naive_bias_oracle(pop: FinitePopulation, mechanism, t: float, n_b: int | None = None,
                      upper_frac: float = 0.85) -> float:
    """Predicted bias of B's eCDF at ``t``.

    (1/N) sum_u G(R_u(t)) (Pr(u in B) N / n_B - 1), where G is the empirical
    distribution of the population's generating errors and R_u = t - m(X_u).
    ``mechanism`` is MAR/MNAR (with ``n_b``) or a vector of Pr(u in B).
    """
    if isinstance(mechanism, str):
        if mechanism not in (MAR, MNAR):
            raise ValueError(f"the bias oracle needs a known mechanism, got {mechanism!r}")
        if n_b is None:
            raise ValueError("n_b is required with a named mechanism")
        incl = inclusion_probabilities(pop, n_b, mechanism, upper_frac)
    else:
        incl = np.asarray(mechanism, dtype=np.float64)
        if incl.shape != (pop.size,):
            raise ValueError("inclusion vector must have one entry per population unit")
    total = float(incl.sum())
    errors = np.sort(pop.errors)
    g = np.searchsorted(errors, t - pop.signal, side="right") / errors.size
    return float(np.mean(g * (incl * pop.size / total - 1.0)))


# --------------------------------------------------------------------------- replicate work


@dataclass
class _Context:
    config: SimConfig
    pop: FinitePopulation
    t_grid: np.ndarray
    truth_cdf: np.ndarray
    truth_q: np.ndarray


_CTX: _Context | None = None


def _install(ctx):
    global _CTX
    _CTX = ctx


def _quantiles(curve, alphas) -> np.ndarray:
    idx = curve.first_index_many(alphas)
    return np.array([np.nan if k is None else curve.grid[k] for k in idx])


def _cell(ctx: _Context, a, b: ConvenienceSample, rep: int, mech: str, n_b: int) -> dict:
    cfg = ctx.config
    alphas = np.asarray(cfg.percentiles)
    nu = ScaleFunction.parse(cfg.nu)
    model = fit_linear(b.x, b.y, nu)
    out = {"cdf": {}, "quantile": {}, "var": {}}
    curves = {}
    for est in cfg.estimators:
        if est == HT:
            out["cdf"][est] = cdf_ht(a, ctx.t_grid)
            curves[est] = ht_curve(a)
        elif est == NAIVE:
            out["cdf"][est] = cdf_naive(b, ctx.t_grid)
            curves[est] = naive_curve(b)
        elif est == PLUGIN:
            out["cdf"][est] = cdf_plugin(a, model, ctx.t_grid)
            curves[est] = plugin_curve(a, model)
        else:
            out["cdf"][est] = cdf_residual(a, model, ctx.t_grid)
            curves[est] = residual_curve(a, model, b, grid_kind=cfg.residual_grid)
        out["quantile"][est] = _quantiles(curves[est], alphas)

    if not cfg.variance_methods:
        return out
    z = z_value(cfg.gamma)
    var_idx = [cfg.percentiles.index(al) for al in cfg.var_alphas]
    f_hat = out["cdf"][RESIDUAL]
    q_hat = out["quantile"][RESIDUAL]
    curve = curves[RESIDUAL]

    def woodruff(k, v_at_q):
        if np.isnan(q_hat[k]) or not np.isfinite(v_at_q):
            return np.nan, np.nan, np.nan
        iv = woodruff_interval(curve, alphas[k], math.sqrt(max(v_at_q, 0.0)), cfg.gamma, z)
        return var_quantile_woodruff(iv.lower, iv.upper, z=z), iv.lower, iv.upper

    def record(method, k, v_cdf, v_q):
        v_q, q_lo, q_hi = v_q
        se = math.sqrt(max(v_cdf, 0.0))
        out["var"][(method, "cdf", k)] = (v_cdf, f_hat[k] - z * se, f_hat[k] + z * se)
        out["var"][(method, "quantile", k)] = (v_q, q_lo, q_hi)

    if ASYMP_SRS in cfg.variance_methods or ASYMP in cfg.variance_methods:
        joint = joint_inclusion(a).matrix() if ASYMP in cfg.variance_methods else None
        for k in var_idx:
            g_t = g_hat_values(a, model, ctx.t_grid[k])
            g_q = None if np.isnan(q_hat[k]) else g_hat_values(a, model, q_hat[k])
            if ASYMP_SRS in cfg.variance_methods:
                v_q = np.nan if g_q is None else srs_component(g_q, a.pop_size)
                record(ASYMP_SRS, k, srs_component(g_t, a.pop_size), woodruff(k, v_q))
            if ASYMP in cfg.variance_methods:
                v1, v2 = double_sum_components(g_t, joint, a.pop_size, n_b)
                v_q = np.nan if g_q is None else sum(double_sum_components(g_q, joint, a.pop_size, n_b))
                record(ASYMP, k, v1 + v2, woodruff(k, v_q))

    if BOOT in cfg.variance_methods:
        res = bootstrap(a, b, ts=ctx.t_grid[var_idx], alphas=alphas[var_idx], l=cfg.bootstrap_l,
                        seed=cfg.seed, stream=(mech, n_b, rep), method=cfg.replicate_method,
                        nu=nu, gamma=cfg.gamma, model=model, curves={RESIDUAL: curve},
                        grid_kind=cfg.residual_grid)
        out["boot_dropped"] = res.dropped
        for j, k in enumerate(var_idx):
            v_cdf = res.cdf_report(RESIDUAL, j).total
            rq = res.quantile_report(RESIDUAL, j)
            d = rq.details
            record(BOOT, k, v_cdf, (rq.total, d.get("lower", np.nan), d.get("upper", np.nan)))
    return out


def _replicate(rep: int):
    ctx = _CTX
    cfg = ctx.config
    a = draw_srs_wor(ctx.pop, cfg.n_a, cfg.seed, rep)
    result = {}
    try:
        for mech in cfg.mechanisms:
            for n_b in cfg.n_b_values:
                b = draw_convenience(ctx.pop, n_b, mech, cfg.seed, n_b, rep,
                                     upper_frac=cfg.upper_frac)
                result[(mech, n_b)] = _cell(ctx, a, b, rep, mech, n_b)
    except (EstimationError, InvariantViolation, np.linalg.LinAlgError) as exc:
        return {"failed": f"replicate {rep}: {exc}"}
    return result


def _run_chunk(reps):
    return [_replicate(r) for r in reps]


# --------------------------------------------------------------------------- report


@dataclass
class SimReport:
    """Tidy metric rows plus the raw per-replicate estimates they summarise."""

    config: SimConfig
    rows: list
    raw: dict = field(repr=False)
    truth_cdf: np.ndarray = field(repr=False)
    truth_quantile: np.ndarray = field(repr=False)
    failures: list = field(default_factory=list)
    population_flags: tuple = ()

    COLUMNS = ("mechanism", "n_b", "estimator", "variance_method", "target", "alpha", "metric",
               "value")

    def frame(self) -> pd.DataFrame:
        df = pd.DataFrame(self.rows, columns=list(self.COLUMNS))
        df.insert(0, "schema_version", SCHEMA_VERSION)
        df.insert(1, "seed", self.config.seed)
        df.insert(2, "config_hash", self.config.hash())
        return df

    def get(self, mechanism, n_b, estimator, target, alpha, metric, variance_method=""):
        for r in self.rows:
            if (r[0], r[1], r[2], r[3], r[4], r[6]) == (mechanism, n_b, estimator, variance_method,
                                                       target, metric) and math.isclose(r[5], alpha):
                return r[7]
        raise KeyError((mechanism, n_b, estimator, variance_method, target, alpha, metric))

    def summary(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "package_version": __version__,
            "seed": self.config.seed,
            "config_hash": self.config.hash(),
            "config": self.config.to_dict(),
            "n_failed": len(self.failures),
            "failures": self.failures,
            "population_flags": list(self.population_flags),
            "truth": {"alpha": list(self.config.percentiles),
                      "T_N": [float(v) for v in self.truth_quantile],
                      "F_N": [float(v) for v in self.truth_cdf]},
            "rmser_definition": "sqrt(MSE(estimator) / MSE(HT))",
            "metrics": [dict(zip(self.COLUMNS, (*r[:7], _json_float(r[7])))) for r in self.rows],
        }

    def write(self, out_dir, stem: str = "simulation"):
        from pathlib import Path
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        self.frame().to_csv(out / f"{stem}.csv", index=False, float_format="%.17g",
                            lineterminator="\n")
        (out / f"{stem}.json").write_text(dumps_json(self.summary()) + "\n")


def _json_float(v):
    return None if v is None or (isinstance(v, float) and not math.isfinite(v)) else v


def dumps_json(doc) -> str:
    def clean(o):
        if isinstance(o, dict):
            return {str(k): clean(v) for k, v in o.items()}
        if isinstance(o, (list, tuple)):
            return [clean(v) for v in o]
        if isinstance(o, (np.floating, float)):
            return _json_float(float(o))
        if isinstance(o, np.integer):
            return int(o)
        if isinstance(o, np.bool_):
            return bool(o)
        return o
    return json.dumps(clean(doc), indent=1, sort_keys=True, allow_nan=False)


def _aggregate(cfg: SimConfig, raw: dict, truth_cdf, truth_q) -> list:
    rows = []
    for (mech, n_b), cell in raw.items():
        for target, truth in (("cdf", truth_cdf), ("quantile", truth_q)):
            est_block = cell[target]
            mse_ht = None
            if HT in est_block:
                e = est_block[HT]
                mse_ht = np.array([np.nanmean((e[:, k] - truth[k]) ** 2) for k in range(truth.size)])
            for est, e in est_block.items():
                for k, alpha in enumerate(cfg.percentiles):
                    col = e[:, k]
                    present = col[~np.isnan(col)]
                    base = (mech, n_b, est, "", target, alpha)
                    rows.append((*base, "truth", float(truth[k])))
                    rows.append((*base, "n_present", float(present.size)))
                    rows.append((*base, "absent", float(col.size - present.size)))
                    if present.size == 0:
                        continue
                    mean = float(present.mean())
                    mse = float(np.mean((present - truth[k]) ** 2))
                    v_mc = float(np.var(present, ddof=1)) if present.size > 1 else float("nan")
                    rows.append((*base, "mean", mean))
                    rows.append((*base, "bias", mean - float(truth[k])))
                    rows.append((*base, "mse", mse))
                    rows.append((*base, "var_mc", v_mc))
                    rows.append((*base, "se_mc", math.sqrt(v_mc / present.size)))
                    if mse_ht is not None and mse_ht[k] > 0:
                        rows.append((*base, "rmser", rmser(mse, float(mse_ht[k]))))
        var_block = cell["var"]
        for (method, target, k), arr in var_block.items():
            truth = (truth_cdf if target == "cdf" else truth_q)[k]
            est_col = cell[target][RESIDUAL][:, k]
            base = (mech, n_b, RESIDUAL, method, target, cfg.percentiles[k])
            ok = ~np.isnan(arr[:, 0])
            rows.append((*base, "n_present", float(ok.sum())))
            if not ok.any():
                continue
            cr, al = coverage_stats(arr[ok, 1:], float(truth))
            mean_v = float(arr[ok, 0].mean())
            present = est_col[~np.isnan(est_col)]
            v_mc = float(np.var(present, ddof=1)) if present.size > 1 else float("nan")
            rows.append((*base, "coverage_pct", cr))
            rows.append((*base, "avg_length", al))
            rows.append((*base, "mean_vhat", mean_v))
            rows.append((*base, "var_mc", v_mc))
            if v_mc > 0:
                rows.append((*base, "rel_bias_pct", relative_bias_pct(mean_v, v_mc)))
        if "boot_dropped" in cell:
            rows.append((mech, n_b, RESIDUAL, BOOT, "cdf", float("nan"), "dropped_replicates",
                         float(cell["boot_dropped"])))
    return rows


def run_monte_carlo(config: SimConfig, threads: int = 1) -> SimReport:
    """Run the simulation described by ``config``.

    Results are identical for any ``threads``: every replicate draws from
    its own substreams and results are combined in replicate order.
    """
    cfg = config
    pop = generate_population(cfg.model_id, cfg.n_pop, cfg.seed)
    for mech in cfg.mechanisms:
        for n_b in cfg.n_b_values:
            if n_b > cfg.n_pop:
                raise ConfigError(f"n_b = {n_b} exceeds the population size")
            inclusion_probabilities(pop, n_b, mech, cfg.upper_frac)  # raises on infeasible strata
    truth_q = np.array([finite_quantile(pop, al) for al in cfg.percentiles])
    truth_cdf = np.asarray(finite_cdf(pop, truth_q), dtype=np.float64)
    ctx = _Context(cfg, pop, truth_q, truth_cdf, truth_q)

    parts = ordered_map(_run_chunk, chunked(cfg.n_sim, max(threads, 1)), threads,
                        initializer=_install, initargs=(ctx,))
    results = [r for part in parts for r in part]
    failures = [r["failed"] for r in results if "failed" in r]
    if len(failures) > MAX_FAIL_SHARE * cfg.n_sim:
        raise SimulationError(f"{len(failures)} of {cfg.n_sim} replicates failed", failures)
    good = [r for r in results if "failed" not in r]
    if not good:
        raise SimulationError("every replicate failed", failures)

    raw = {}
    for key in good[0]:
        cell = {"cdf": {}, "quantile": {}, "var": {}}
        for target in ("cdf", "quantile"):
            for est in cfg.estimators:
                cell[target][est] = np.array([r[key][target][est] for r in good])
        for vkey in good[0][key]["var"]:
            cell["var"][vkey] = np.array([r[key]["var"][vkey] for r in good], dtype=np.float64)
        if "boot_dropped" in good[0][key]:
            cell["boot_dropped"] = int(sum(r[key]["boot_dropped"] for r in good))
        raw[key] = cell
    rows = _aggregate(cfg, raw, truth_cdf, truth_q)
    return SimReport(cfg, rows, raw, truth_cdf, truth_q, failures, pop.flags)
