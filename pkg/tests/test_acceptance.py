"""Acceptance gate: one PASS/FAIL line per criterion.

Monte Carlo checks use one seed fixed in advance (SEED) and desk-scale
settings; the full module takes roughly ten minutes on one core.
"""

import shutil
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from resecdf.cli import main
from resecdf.estimators import cdf_plugin, cdf_residual
from resecdf.population import generate_population
from resecdf.regression import FittedModel, ScaleFunction, fit_linear
from resecdf.sampling import ProbabilitySample, joint_inclusion
from resecdf.simharness import SimConfig, naive_bias_oracle, run_monte_carlo
from resecdf.variance import double_sum_components, srs_component

pytestmark = pytest.mark.slow

SEED = 2026
PCTS = (0.01, 0.10, 0.25, 0.50, 0.75, 0.90, 0.99)
DATA = Path(__file__).parent / "data"


def record(number: int, title: str, ok: bool, detail: str):
    line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def stat(report, mech, n_b, est, target, alpha, metric, method=""):
    return report.get(mech, n_b, est, target, alpha, metric, method)


# --------------------------------------------------------------------------- shared runs


@pytest.fixture(scope="module")
def xi1_runs():
    cfg = SimConfig(model_id="xi1", n_pop=10_000, n_a=500, n_b_multipliers=(1, 10),
                    mechanisms=("MAR", "MNAR"), n_sim=200, seed=SEED)
    return run_monte_carlo(cfg)


@pytest.fixture(scope="module")
def coverage_runs():
    cfg = SimConfig(model_id="xi1", n_pop=10_000, n_a=500, n_b_multipliers=(1,),
                    mechanisms=("MAR", "MNAR"), n_sim=200, estimators=("Residual",),
                    variance_methods=("bootstrap",), variance_percentiles=(0.5,),
                    bootstrap_l=750, seed=SEED)
    return run_monte_carlo(cfg)


# --------------------------------------------------------------------------- criteria


def brute_residual_cdf(yhat_a, nu_a, weight, eps_b, pop_size, t):
    total = 0.0
    for yh, nu, w in zip(yhat_a, nu_a, weight):
        r = (t - yh) / nu
        total += w * (sum(1 for e in eps_b if e <= r) / len(eps_b))
    return total / pop_size


def test_c01_oracle_equivalence():
    rng = np.random.default_rng(SEED)
    worst = 0.0
    for _ in range(1000):
        n_a, n_b, p = int(rng.integers(1, 51)), int(rng.integers(4, 51)), int(rng.integers(0, 3))
        p = min(p, n_b - 2)
        xa, xb = rng.normal(size=(n_a, p)), rng.normal(size=(n_b, p))
        yb = xb.sum(axis=1) + rng.normal(size=n_b)
        nu = ScaleFunction("constant", float(rng.uniform(0.5, 2.0)))
        model = fit_linear(xb, yb, nu)
        a = ProbabilitySample(xa, rng.uniform(1, 20, n_a), int(rng.integers(n_a * 20, n_a * 40)))
        eps = ((yb - model.predict(xb)) / nu(xb)).tolist()
        yhat, nu_a = model.predict(xa).tolist(), nu(xa).tolist()
        for t in rng.normal(scale=3, size=3):
            fast = cdf_residual(a, model, t)
            slow = brute_residual_cdf(yhat, nu_a, a.weight.tolist(), eps, a.pop_size, t)
            worst = max(worst, abs(fast - slow))
    record(1, "binary search == O(n_A n_B) double loop", worst <= 1e-12,
           f"max |diff| = {worst:.3g} over 1000 instances (tol 1e-12)")


def test_c02_identity_linkage():
    rng = np.random.default_rng(SEED + 1)
    mismatches = 0
    for _ in range(100):
        n_a, n_b, p = int(rng.integers(1, 40)), int(rng.integers(1, 40)), int(rng.integers(1, 4))
        nu = ScaleFunction("constant", float(rng.choice([1.0, 2.5])))
        model = FittedModel(rng.normal(size=p + 1), np.zeros(n_b), nu)
        a = ProbabilitySample(rng.normal(size=(n_a, p)), rng.uniform(1, 9, n_a), 500)
        ts = np.concatenate([rng.normal(scale=3, size=30), model.predict(a.x)])
        mismatches += int(np.sum(cdf_residual(a, model, ts) != cdf_plugin(a, model, ts)))
    record(2, "zero residuals: residual == plug-in exactly", mismatches == 0,
           f"{mismatches} mismatching points over 100 instances")


def test_c03_ht_design_unbiased(xi1_runs):
    worst = []
    for al in PCTS:
        bias = stat(xi1_runs, "MAR", 500, "HT", "cdf", al, "bias")
        se = stat(xi1_runs, "MAR", 500, "HT", "cdf", al, "se_mc")
        worst.append(abs(bias) / se)
    record(3, "HT unbiased at 7 percentiles", max(worst) < 3,
           "max |bias|/SE_MC = " + f"{max(worst):.2f} (limit 3); per alpha "
           + ", ".join(f"{w:.2f}" for w in worst))


def test_c04_residual_unbiased_mar(xi1_runs):
    ratios = []
    for al in PCTS:
        bias = stat(xi1_runs, "MAR", 500, "Residual", "cdf", al, "bias")
        se = stat(xi1_runs, "MAR", 500, "Residual", "cdf", al, "se_mc")
        ratios.append(abs(bias) / se)
    record(4, "residual estimator unbiased under MAR, xi1", max(ratios) < 3,
           "max |bias|/SE_MC = " + f"{max(ratios):.2f} (limit 3); per alpha "
           + ", ".join(f"{r:.2f}" for r in ratios))


@pytest.fixture(scope="module")
def xi2_run():
    cfg = SimConfig(model_id="xi2", n_pop=10_000, n_a=500, n_b_multipliers=(1, 10),
                    mechanisms=("MAR",), n_sim=200, seed=SEED)
    return run_monte_carlo(cfg)


def test_c05_ordering_under_mar(xi1_runs, xi2_run):
    failures, cells = [], 0
    for name, rep in (("xi1", xi1_runs), ("xi2", xi2_run)):
        for n_b in (500, 5000):
            for al in (0.25, 0.50, 0.75):
                r = stat(rep, "MAR", n_b, "Residual", "cdf", al, "rmser")
                p = stat(rep, "MAR", n_b, "PlugIn", "cdf", al, "rmser")
                b = stat(rep, "MAR", n_b, "Naive", "cdf", al, "rmser")
                cells += 1
                if not (r < p and r < b):
                    failures.append(f"{name} n_B={n_b} a={al}: R={r:.3f} P={p:.3f} B={b:.3f}")
    record(5, "RMSER(R) < RMSER(P), RMSER(B) under MAR", not failures,
           f"{cells - len(failures)}/{cells} cells ordered" + ("; " + "; ".join(failures) if failures else ""))


def test_c06_naive_bias_mnar(xi1_runs):
    from resecdf.population import finite_quantile
    pop = generate_population("xi1", 10_000, SEED)
    t = finite_quantile(pop, 0.5)
    bias = stat(xi1_runs, "MNAR", 500, "Naive", "cdf", 0.5, "bias")
    se = stat(xi1_runs, "MNAR", 500, "Naive", "cdf", 0.5, "se_mc")
    oracle = naive_bias_oracle(pop, "MNAR", t, n_b=500)
    large = abs(bias) > 5 * se
    matches = abs(bias - oracle) < 3 * se
    record(6, "naive bias under MNAR: large and matches oracle", large and matches,
           f"MC bias {bias:.4f}, SE_MC {se:.3g}, |bias| > 5 SE: {large}; "
           f"oracle {oracle:.4f}, |bias - oracle| = {abs(bias - oracle):.4f} < 3 SE: {matches}")


def test_c07_tail_mitigation(xi1_runs):
    b99 = stat(xi1_runs, "MNAR", 500, "Naive", "cdf", 0.99, "bias")
    b50 = stat(xi1_runs, "MNAR", 500, "Naive", "cdf", 0.50, "bias")
    record(7, "|naive bias| at 99th < at 50th under MNAR", abs(b99) < abs(b50),
           f"|bias(.99)| = {abs(b99):.4f}, |bias(.50)| = {abs(b50):.4f}")


def test_c08_coverage_mar(coverage_runs):
    cr = stat(coverage_runs, "MAR", 500, "Residual", "cdf", 0.5, "coverage_pct", "bootstrap")
    record(8, "bootstrap CDF coverage at median, MAR", abs(cr - 90.0) <= 4.5,
           f"coverage {cr:.1f}% (target 90 +/- 4.5), L = 750, n_sim = 200")


def test_c09_coverage_mnar(coverage_runs):
    cr = stat(coverage_runs, "MNAR", 500, "Residual", "cdf", 0.5, "coverage_pct", "bootstrap")
    record(9, "bootstrap CDF coverage at median, MNAR", cr < 80.0,
           f"coverage {cr:.1f}% (must be < 80)")


def test_c10_quantile_bootstrap_underestimates():
    cfg = SimConfig(model_id="xi1", n_pop=10_000, n_a=200, n_b_multipliers=(20,),
                    mechanisms=("MAR",), n_sim=200, estimators=("Residual",),
                    variance_methods=("bootstrap",), variance_percentiles=(0.5,),
                    bootstrap_l=750, seed=SEED)
    rep = run_monte_carlo(cfg)
    v_hat = stat(rep, "MAR", 4000, "Residual", "quantile", 0.5, "mean_vhat", "bootstrap")
    v_mc = stat(rep, "MAR", 4000, "Residual", "quantile", 0.5, "var_mc", "bootstrap")
    record(10, "mean bootstrap Var[T_R(.5)] < Monte Carlo variance", v_hat < v_mc,
           f"mean V_boot {v_hat:.4g} vs V_MC {v_mc:.4g} (N = 1e4, n_A = 200, n_B = 4000)")


def test_c11_absent_quantile_xi3():
    cfg = SimConfig(model_id="xi3", n_pop=10_000, n_a=500, n_b_multipliers=(1,),
                    mechanisms=("MAR",), n_sim=200, seed=SEED)
    rep = run_monte_carlo(cfg)
    absent = stat(rep, "MAR", 500, "Residual", "quantile", 0.99, "absent")
    record(11, "T_R(.99) absent in > 50% of runs under xi3", absent > 100 and not rep.failures,
           f"absent in {absent:.0f}/200 runs, {len(rep.failures)} failed replicates")


def test_c12_srs_formula_equals_v1():
    rng = np.random.default_rng(SEED + 12)
    worst = 0.0
    for _ in range(500):
        n = int(rng.integers(2, 31))
        big_n = n + int(rng.integers(1, 2000))
        g = rng.uniform(size=n)
        if rng.uniform() < 0.1:
            g = np.round(g * 2) / 2  # ties and repeated values
        pij = joint_inclusion("srswor", n=n, pop_size=big_n).matrix()
        v1, _ = double_sum_components(g, pij, big_n, 10)
        srs = srs_component(g, big_n)
        pi = np.diag(pij)
        scale = float(g @ np.abs((pij / np.outer(pi, pi) - 1) / pij) @ g) / big_n**2
        worst = max(worst, abs(srs - v1) / max(srs, scale))
    record(12, "SRS shortcut == general V1", worst <= 1e-10,
           f"max relative difference {worst:.3g} over 500 vectors (tol 1e-10)")


def test_c13_determinism(tmp_path):
    sim_cfg = tmp_path / "sim.cfg"
    sim_cfg.write_text("n_pop = 2000\nn_a = 100\nn_b_multipliers = 1, 5\nn_sim = 8\n"
                       "variance_methods = asymp_srs, bootstrap\nvariance_percentiles = 0.5\n"
                       "bootstrap_l = 20\n")
    est_cfg = tmp_path / "est.cfg"
    est_cfg.write_text(f"probability_csv = {DATA / 'probability.csv'}\n"
                       f"convenience_csv = {DATA / 'convenience.csv'}\n"
                       "population_size = 1500\ndesign = srswor\nbootstrap_l = 30\n")
    commands = {
        "simulate": ["simulate", "--config", str(sim_cfg), "--seed", "11"],
        "estimate": ["estimate", "--config", str(est_cfg), "--seed", "11"],
        "variance": ["variance", "--config", str(est_cfg), "--seed", "11"],
    }
    out = tmp_path / "out"
    differing = []
    for name, argv in commands.items():
        runs = []
        for threads in ("1", "1", "2"):
            if out.exists():
                shutil.rmtree(out)
            assert main([*argv, "--out", str(out), "--threads", threads]) == 0
            runs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
        if not (runs[0] == runs[1] == runs[2]):
            differing.append(name)
    record(13, "byte-identical outputs, repeated and serial vs parallel", not differing,
           "all three commands identical" if not differing else f"differs: {differing}")
