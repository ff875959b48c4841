"""Command-line front end: ``resecdf simulate | estimate | variance``.

Configuration is a flat ``key = value`` text file. Lines starting with ``#``
are comments, lists are comma separated, and unknown keys are rejected.
Outputs are tidy CSV plus JSON; every file carries the schema version, the
seed and a hash of the effective configuration. On failure nothing is
written, an error document goes to stderr, and the exit status is 2 for
invalid input or 3 when estimation breaks down.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from ._parallel import default_threads
from .estimators import (GRID_PREDICTIONS, HT, NAIVE, PLUGIN, RESIDUAL, RESIDUAL_GRIDS, cdf_ht, cdf_naive, cdf_plugin,
                         cdf_residual, ht_curve, invert_quantile, naive_curve, plugin_curve,
                         residual_curve, woodruff_interval, z_value)
from .exceptions import (ConfigError, EstimationError, InvariantViolation, SamplingError,
                         SimulationError)
from .regression import ScaleFunction, fit_linear
from .sampling import (EXTERNAL_WEIGHTS, SRSWOR, ConvenienceSample, ProbabilitySample,
                       joint_inclusion)
from .simharness import PERCENTILES, PRESETS, SCHEMA_VERSION, SimConfig, dumps_json, preset, \
    run_monte_carlo
from .variance import (REPLICATE_METHODS, bootstrap, double_sum_components, g_hat_values,
                       srs_component, var_quantile_woodruff)

EXIT_OK, EXIT_INVALID, EXIT_FAILED = 0, 2, 3


class InputError(ConfigError):
    """Invalid input files or options."""


# --------------------------------------------------------------------------- config files


def _floats(text):
    return tuple(float(v) for v in text.split(",") if v.strip())


def _strs(text):
    return tuple(v.strip() for v in text.split(",") if v.strip())


SIMULATE_KEYS = {
    "model_id": str, "n_pop": int, "n_a": int, "n_b_multipliers": _floats,
    "mechanisms": _strs, "percentiles": _floats, "n_sim": int, "estimators": _strs,
    "variance_methods": _strs, "variance_percentiles": _floats, "bootstrap_l": int,
    "replicate_method": str, "gamma": float, "upper_frac": float, "nu": str, "residual_grid": str,
    "seed": int,
}

ESTIMATE_KEYS = {
    "probability_csv": str, "convenience_csv": str, "weight_column": str,
    "response_column": str, "covariates": _strs, "population_size": int,
    "design": str, "percentiles": _floats, "bootstrap_l": int, "replicate_method": str,
    "gamma": float, "nu": str, "seed": int, "variance_methods": _strs,
    "joint_inclusion_csv": str, "residual_grid": str,
}

ESTIMATE_DEFAULTS = {
    "weight_column": "weight", "response_column": "y", "covariates": None,
    "population_size": None, "design": EXTERNAL_WEIGHTS, "percentiles": PERCENTILES,
    "bootstrap_l": 750, "replicate_method": "rao_wu", "gamma": 0.90, "nu": "constant",
    "seed": 0, "variance_methods": ("auto",), "joint_inclusion_csv": None,
    "residual_grid": GRID_PREDICTIONS,
}


def parse_config(text: str, schema: dict) -> dict:
    """Parse ``key = value`` lines against ``schema`` (key -> converter)."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in schema:
            raise ConfigError(f"line {lineno}: unknown key {key!r}; allowed: {sorted(schema)}")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            out[key] = schema[key](value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from None
    return out


def _read_config(path, schema) -> tuple[dict, str | None]:
    if path is None:
        return {}, None
    p = Path(path)
    if not p.exists() or p.is_dir():
        raise InputError(f"config file not found: {path}")
    return parse_config(p.read_text(encoding="utf-8"), schema), str(p)


def config_hash(doc: dict) -> str:
    text = json.dumps(doc, sort_keys=True, separators=(",", ":"), default=list)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _stamp(frame: pd.DataFrame, seed: int, chash: str) -> pd.DataFrame:
    frame = frame.copy()
    frame.insert(0, "schema_version", SCHEMA_VERSION)
    frame.insert(1, "seed", seed)
    frame.insert(2, "config_hash", chash)
    return frame


def _write_csv(frame: pd.DataFrame, path: Path):
    frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")


def _manifest(command, args, config_path, inputs, seed, chash, extra=None) -> dict:
    doc = {"command": command, "config_path": config_path, "inputs": inputs,
           "output_dir": str(args.out), "seed": seed, "schema_version": SCHEMA_VERSION,
           "config_hash": chash, "package_version": __version__}
    doc.update(extra or {})
    return doc


# --------------------------------------------------------------------------- simulate


def cmd_simulate(args) -> dict:
    cfg_values, cfg_path = _read_config(args.config, SIMULATE_KEYS)
    if args.seed is not None:
        cfg_values["seed"] = args.seed
    if args.replicates is not None:
        cfg_values["bootstrap_l"] = args.replicates
    try:
        cfg = preset(args.preset, **cfg_values) if args.preset else SimConfig(**cfg_values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    report = run_monte_carlo(cfg, threads=args.threads)
    chash = cfg.hash()
    summary = report.summary()
    manifest = _manifest("simulate", args, cfg_path, {}, cfg.seed, chash,
                         {"preset": args.preset, "bootstrap_l": cfg.bootstrap_l})
    return {"simulation.csv": report.frame(), "simulation.json": summary,
            "manifest.json": manifest}


# --------------------------------------------------------------------------- estimate / variance


def _load_csv(path, label) -> pd.DataFrame:
    if path is None:
        raise InputError(f"{label} is required")
    p = Path(path)
    if not p.is_file():
        raise InputError(f"{label} not found: {path}")
    frame = pd.read_csv(p, encoding="utf-8")
    if frame.empty:
        raise InputError(f"{label} has no rows")
    return frame


def _numeric(frame: pd.DataFrame, cols, label) -> np.ndarray:
    sub = frame[list(cols)]
    if sub.isna().any().any():
        raise InputError(f"{label} has missing cells in columns {sub.columns[sub.isna().any()].tolist()}")
    try:
        return sub.to_numpy(np.float64)
    except ValueError:
        raise InputError(f"{label} has non-numeric values in {list(cols)}") from None


class _Inputs:
    """Validated samples A and B built from the two CSV files and the config."""

    def __init__(self, cfg: dict):
        fa = _load_csv(cfg.get("probability_csv"), "probability_csv")
        fb = _load_csv(cfg.get("convenience_csv"), "convenience_csv")
        wcol, ycol = cfg["weight_column"], cfg["response_column"]
        if wcol not in fa.columns:
            raise InputError(f"weight column {wcol!r} missing from the probability sample")
        if ycol not in fb.columns:
            raise InputError(f"response column {ycol!r} missing from the convenience sample")
        cov_a = [c for c in fa.columns if c not in (wcol, ycol)]
        cov_b = [c for c in fb.columns if c != ycol]
        if cfg["covariates"]:
            covs = list(cfg["covariates"])
            missing = sorted({c for c in covs if c not in fa.columns or c not in fb.columns})
            if missing:
                raise InputError(f"covariates missing from an input file: {missing}")
        else:
            diff = sorted(set(cov_a) ^ set(cov_b))
            if diff:
                raise InputError(f"covariate names differ between files: {diff}")
            covs = cov_a
        self.covariates = covs
        weight = _numeric(fa, [wcol], "probability sample")[:, 0]
        if np.any(weight <= 0):
            raise InputError("design weights must be positive")
        self.population_size = cfg["population_size"] or int(round(weight.sum()))
        self.population_size_source = "config" if cfg["population_size"] else "sum_of_weights"
        design = cfg["design"]
        if design not in (SRSWOR, EXTERNAL_WEIGHTS):
            raise InputError(f"design must be {SRSWOR!r} or {EXTERNAL_WEIGHTS!r}")
        y_a = _numeric(fa, [ycol], "probability sample")[:, 0] if ycol in fa.columns else None
        self.a = ProbabilitySample(_numeric(fa, covs, "probability sample"), weight,
                                   self.population_size, design=design, y=y_a)
        self.b = ConvenienceSample(_numeric(fb, covs, "convenience sample"),
                                   _numeric(fb, [ycol], "convenience sample")[:, 0])
        self.files = {"probability_csv": cfg["probability_csv"],
                      "convenience_csv": cfg["convenience_csv"]}


def _estimate_config(args) -> tuple[dict, str | None]:
    values, path = _read_config(args.config, ESTIMATE_KEYS)
    cfg = {**ESTIMATE_DEFAULTS, **values}
    for key in ("probability_csv", "convenience_csv"):
        if getattr(args, key, None):
            cfg[key] = getattr(args, key)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.replicates is not None:
        cfg["bootstrap_l"] = args.replicates
    if any(not 0.0 < a < 1.0 for a in cfg["percentiles"]) or not cfg["percentiles"]:
        raise ConfigError("every percentile must lie in (0, 1)")
    if cfg["bootstrap_l"] < 2:
        raise ConfigError("bootstrap_l must be at least 2")
    if cfg["replicate_method"] not in REPLICATE_METHODS:
        raise ConfigError(f"replicate_method must be one of {REPLICATE_METHODS}")
    if not 0.0 < cfg["gamma"] < 1.0:
        raise ConfigError("gamma must lie in (0, 1)")
    if cfg["residual_grid"] not in RESIDUAL_GRIDS:
        raise ConfigError(f"residual_grid must be one of {RESIDUAL_GRIDS}")
    try:
        ScaleFunction.parse(cfg["nu"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg, path


def _evaluation_points(inp: _Inputs, curves: dict, alphas) -> tuple[np.ndarray, str]:
    """Thresholds at which CDFs are reported: the reference quantiles when A has Y."""
    source = HT if HT in curves else NAIVE
    return np.array([invert_quantile(curves[source], a) for a in alphas], dtype=np.float64), source


def pct_arb(estimate: float, reference: float) -> float:
    """|estimate - reference| / reference * 100."""
    if reference == 0:
        return float("nan")
    return abs(estimate - reference) / abs(reference) * 100.0


def cmd_estimate(args) -> dict:
    cfg, cfg_path = _estimate_config(args)
    inp = _Inputs(cfg)
    a, b = inp.a, inp.b
    alphas = np.asarray(cfg["percentiles"], dtype=np.float64)
    nu = ScaleFunction.parse(cfg["nu"])
    model = fit_linear(b.x, b.y, nu, columns=inp.covariates)
    curves = {RESIDUAL: residual_curve(a, model, b, grid_kind=cfg["residual_grid"]),
              PLUGIN: plugin_curve(a, model), NAIVE: naive_curve(b)}
    if a.y is not None:
        curves[HT] = ht_curve(a)
    ts, t_source = _evaluation_points(inp, curves, alphas)
    cdfs = {RESIDUAL: cdf_residual(a, model, ts), PLUGIN: cdf_plugin(a, model, ts),
            NAIVE: cdf_naive(b, ts)}
    if a.y is not None:
        cdfs[HT] = cdf_ht(a, ts)
    quants = {e: [invert_quantile(c, al) for al in alphas] for e, c in curves.items()}

    boot = bootstrap(a, b, ts=ts, alphas=alphas, l=cfg["bootstrap_l"], seed=cfg["seed"],
                     stream=("estimate",), method=cfg["replicate_method"], nu=nu,
                     estimators=(RESIDUAL, PLUGIN, NAIVE), gamma=cfg["gamma"], model=model,
                     curves=curves, threads=args.threads, grid_kind=cfg["residual_grid"])
    z = z_value(cfg["gamma"])
    rows = []
    for k, alpha in enumerate(alphas):
        for est in curves:
            f = float(cdfs[est][k])
            q = quants[est][k]
            fallback = ""
            if q is None and est == RESIDUAL and args.fallback_naive_quantile:
                q, fallback = quants[NAIVE][k], NAIVE
            cdf_row = {"estimator": est, "target": "cdf", "alpha": alpha, "t": ts[k],
                       "estimate": f, "absent": 0, "fallback": ""}
            q_row = {"estimator": est, "target": "quantile", "alpha": alpha, "t": np.nan,
                     "estimate": np.nan if q is None else q, "absent": int(q is None),
                     "fallback": fallback}
            if est in boot.estimators:
                v = boot.cdf_report(est, k).total
                cdf_row.update(variance=v, ci_lower=f - z * np.sqrt(v), ci_upper=f + z * np.sqrt(v))
                if not fallback:
                    rq = boot.quantile_report(est, k)
                    q_row.update(variance=rq.total, ci_lower=rq.details.get("lower", np.nan),
                                 ci_upper=rq.details.get("upper", np.nan))
            if HT in curves and est != HT:
                cdf_row["pct_arb"] = pct_arb(f, float(cdfs[HT][k]))
                ref_q = quants[HT][k]
                q_row["pct_arb"] = (np.nan if q is None or ref_q is None
                                    else pct_arb(q, ref_q))
            rows += [cdf_row, q_row]
    cols = ["estimator", "target", "alpha", "t", "estimate", "absent", "fallback", "variance",
            "ci_lower", "ci_upper", "pct_arb"]
    frame = pd.DataFrame(rows).reindex(columns=cols)
    chash = config_hash(cfg)
    summary = {"schema_version": SCHEMA_VERSION, "seed": cfg["seed"], "config_hash": chash,
               "coefficients": dict(zip(["intercept", *inp.covariates], map(float, model.beta))),
               "n_a": a.size, "n_b": b.size, "population_size": inp.population_size,
               "population_size_source": inp.population_size_source,
               "evaluation_points": t_source, "bootstrap_l": cfg["bootstrap_l"],
               "bootstrap_dropped": boot.dropped, "replicate_method": cfg["replicate_method"],
               "gamma": cfg["gamma"], "estimates": frame.to_dict(orient="records")}
    manifest = _manifest("estimate", args, cfg_path, inp.files, cfg["seed"], chash,
                         {"bootstrap_l": cfg["bootstrap_l"]})
    return {"estimates.csv": _stamp(frame, cfg["seed"], chash), "estimates.json": summary,
            "manifest.json": manifest}


def cmd_variance(args) -> dict:
    cfg, cfg_path = _estimate_config(args)
    inp = _Inputs(cfg)
    a, b = inp.a, inp.b
    methods = set(cfg["variance_methods"])
    if methods - {"auto", "asymp", "bootstrap"}:
        raise ConfigError("variance_methods must be drawn from auto, asymp, bootstrap")
    joint = None
    if cfg["joint_inclusion_csv"]:
        jpath = Path(cfg["joint_inclusion_csv"])
        if not jpath.is_file():
            raise InputError(f"joint_inclusion_csv not found: {jpath}")
        joint = joint_inclusion(a, explicit=np.loadtxt(jpath, delimiter=",", ndmin=2))
    elif a.design == SRSWOR:
        joint = joint_inclusion(a)
    if "asymp" in methods and joint is None:
        raise InputError("asymptotic variance needs an SRS design or explicit joint inclusion "
                         "probabilities (joint_inclusion_csv)")
    want_asymp = joint is not None and ("asymp" in methods or "auto" in methods)
    want_boot = "bootstrap" in methods or "auto" in methods

    alphas = np.asarray(cfg["percentiles"], dtype=np.float64)
    nu = ScaleFunction.parse(cfg["nu"])
    model = fit_linear(b.x, b.y, nu, columns=inp.covariates)
    curve = residual_curve(a, model, b, grid_kind=cfg["residual_grid"])
    curves = {RESIDUAL: curve, NAIVE: naive_curve(b)}
    if a.y is not None:
        curves[HT] = ht_curve(a)
    ts, t_source = _evaluation_points(inp, curves, alphas)
    f_hat = cdf_residual(a, model, ts)
    q_hat = [invert_quantile(curve, al) for al in alphas]
    z = z_value(cfg["gamma"])
    rows = []

    def add(method, target, k, v1, v2, total, used=0, dropped=0, lower=np.nan, upper=np.nan,
            se_cdf=np.nan):
        rows.append({"estimator": RESIDUAL, "target": target, "alpha": alphas[k],
                     "t": ts[k] if target == "cdf" else np.nan,
                     "estimate": f_hat[k] if target == "cdf" else (np.nan if q_hat[k] is None else q_hat[k]),
                     "method": method, "v1": v1, "v2": v2, "total": total,
                     "replicates_used": used, "dropped": dropped,
                     "ci_lower": lower, "ci_upper": upper, "se_cdf": se_cdf})

    if want_asymp:
        label = "AsympSRS" if joint.kind == SRSWOR else "AsympGeneral"
        matrix = joint.matrix()
        for k in range(alphas.size):
            for target, t in (("cdf", ts[k]), ("quantile", q_hat[k])):
                if t is None:
                    add(label, target, k, np.nan, np.nan, np.nan)
                    continue
                g = g_hat_values(a, model, t)
                if label == "AsympSRS":
                    v1, v2 = srs_component(g, a.pop_size), 0.0
                else:
                    v1, v2 = double_sum_components(g, matrix, a.pop_size, b.size)
                if target == "cdf":
                    se = np.sqrt(max(v1 + v2, 0.0))
                    add(label, target, k, v1, v2, v1 + v2, lower=f_hat[k] - z * se,
                        upper=f_hat[k] + z * se)
                else:
                    # quantile rows: v1 holds the Woodruff variance; se_cdf the CDF SE at T-hat
                    se = np.sqrt(max(v1 + v2, 0.0))
                    iv = woodruff_interval(curve, alphas[k], se, cfg["gamma"])
                    v_q = var_quantile_woodruff(iv.lower, iv.upper, z=z)
                    add(label, target, k, v_q, 0.0, v_q, lower=iv.lower, upper=iv.upper,
                        se_cdf=se)
    if want_boot:
        boot = bootstrap(a, b, ts=ts, alphas=alphas, l=cfg["bootstrap_l"], seed=cfg["seed"],
                         stream=("variance",), method=cfg["replicate_method"], nu=nu,
                         gamma=cfg["gamma"], model=model, curves={RESIDUAL: curve},
                         threads=args.threads, grid_kind=cfg["residual_grid"])
        for k in range(alphas.size):
            rc = boot.cdf_report(RESIDUAL, k)
            se = np.sqrt(rc.total)
            add("Bootstrap", "cdf", k, rc.v1, rc.v2, rc.total, rc.replicates_used, rc.dropped,
                f_hat[k] - z * se, f_hat[k] + z * se)
            rq = boot.quantile_report(RESIDUAL, k)
            add("Bootstrap", "quantile", k, rq.v1, rq.v2, rq.total, rq.replicates_used,
                rq.dropped, rq.details.get("lower", np.nan), rq.details.get("upper", np.nan),
                rq.details.get("se_cdf_at_quantile", np.nan))

    frame = pd.DataFrame(rows)
    chash = config_hash(cfg)
    summary = {"schema_version": SCHEMA_VERSION, "seed": cfg["seed"], "config_hash": chash,
               "methods": sorted(set(frame["method"])) if len(frame) else [],
               "evaluation_points": t_source, "bootstrap_l": cfg["bootstrap_l"],
               "replicate_method": cfg["replicate_method"],
               "population_size": inp.population_size,
               "population_size_source": inp.population_size_source,
               "variances": frame.to_dict(orient="records")}
    manifest = _manifest("variance", args, cfg_path, inp.files, cfg["seed"], chash,
                         {"bootstrap_l": cfg["bootstrap_l"]})
    return {"variance.csv": _stamp(frame, cfg["seed"], chash), "variance.json": summary,
            "manifest.json": manifest}


# --------------------------------------------------------------------------- entry point


COMMANDS = {"simulate": cmd_simulate, "estimate": cmd_estimate, "variance": cmd_variance}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="resecdf", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="key = value configuration file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int, default=default_threads())
        p.add_argument("-L", "--replicates", type=int, help="bootstrap replicate count")
        if name == "simulate":
            p.add_argument("--preset", choices=sorted(PRESETS))
        else:
            p.add_argument("--probability-csv", dest="probability_csv")
            p.add_argument("--convenience-csv", dest="convenience_csv")
            p.add_argument("--fallback-naive-quantile", action="store_true",
                           help="report the naive quantile where the residual one is absent")
    return parser


def _emit(outputs: dict, out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, obj in outputs.items():
        path = out_dir / name
        if isinstance(obj, pd.DataFrame):
            _write_csv(obj, path)
        else:
            path.write_text(dumps_json(obj) + "\n", encoding="utf-8")


def _fail(code: int, exc: BaseException) -> int:
    doc = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    for attr in ("columns", "stratum_sizes", "allocation"):
        if getattr(exc, attr, None):
            doc[attr] = list(getattr(exc, attr))
    if isinstance(exc, SimulationError):
        doc["failures"] = exc.failures[:20]
    print(json.dumps(doc, sort_keys=True), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        return _fail(EXIT_INVALID, ConfigError("--threads must be at least 1"))
    try:
        outputs = COMMANDS[args.command](args)
    except (ConfigError, SamplingError, ValueError, KeyError) as exc:
        return _fail(EXIT_INVALID, exc)
    except (SimulationError, EstimationError, InvariantViolation) as exc:
        return _fail(EXIT_FAILED, exc)
    _emit(outputs, Path(args.out))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
