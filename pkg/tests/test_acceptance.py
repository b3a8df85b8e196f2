"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Budgeted runtimes are asserted where stated.  Random instances use fixed
seeds so every run exercises the same draws.
"""

import json
import time

import numpy as np
import pandas as pd
import pytest

import lrseries as lr
from lrseries.crossfit import FirstStageConfig
from lrseries.montecarlo import _logistic

from oracles import (
    gauss_jordan_inverse,
    gauss_jordan_solve,
    mpmath_normal_quantile,
    newton_logistic_mle,
)


def _report(num: int, name: str, ok: bool, detail: str = "") -> None:
    status = "PASS" if ok else "FAIL"
    print(f"\nACCEPTANCE {num} ({name}): {status} {detail}")


def test_criterion_01_oracle_equality_degenerate_missingness():
    start = time.time()
    worst = 0.0
    master = lr.RngStream(101)
    for i in range(50):
        g = master.child(i).generator()
        n = int(g.integers(30, 201))
        degree = int(g.integers(1, 8))  # intercept + degree <= 8 columns
        x = g.standard_normal(n)
        y = g.standard_normal(n) + x
        z = g.standard_normal((n, 3))
        data = lr.Dataset(y_obs=y, d=np.ones(n), x=x, z=z)
        folds = lr.make_folds(n, 5, master.child(1000 + i))
        cfg = FirstStageConfig(mu_override=0.0, s_override=1.0)
        cf = lr.crossfit_signals(data, folds, lr.SignalKind.ROBUST_MISSING, cfg)
        spec = lr.BasisSpec(kind="polynomial", degree=degree, ndim=1)
        dm = lr.design_matrix(data.x, spec)
        beta = lr.fit_lre(dm, cf.yhat)
        ols = np.linalg.lstsq(dm.values, y, rcond=None)[0]
        rel = np.max(np.abs(beta - ols)) / max(1.0, np.max(np.abs(ols)))
        worst = max(worst, rel)
    elapsed = time.time() - start
    ok = worst < 1e-10 and elapsed < 5.0
    _report(1, "oracle equality under degenerate missingness", ok,
            f"worst rel err {worst:.2e}, {elapsed:.1f}s")
    assert worst < 1e-10
    assert elapsed < 5.0


def test_criterion_02_normal_equation_oracles():
    start = time.time()
    worst = {"fit": 0.0, "cov": 0.0, "boot": 0.0}
    master = lr.RngStream(202)
    for i in range(50):
        g = master.child(i).generator()
        n = int(g.integers(20, 80))
        degree = int(g.integers(1, 4))
        x = g.standard_normal(n)
        y = g.standard_normal(n)
        spec = lr.BasisSpec(kind="polynomial", degree=degree, ndim=1)
        dm = lr.design_matrix(x, spec)
        p = dm.values

        beta = lr.fit_lre(dm, y)
        beta_o = gauss_jordan_solve(p.T @ p / n, p.T @ y / n)
        worst["fit"] = max(worst["fit"], np.max(np.abs(beta - beta_o)) / max(1.0, np.max(np.abs(beta_o))))

        cov = lr.estimate_covariance(dm, y, beta)
        resid = y - p @ beta_o
        qinv = gauss_jordan_inverse(p.T @ p / n)
        cov_o = qinv @ ((p * resid[:, None] ** 2).T @ p / n) @ qinv
        worst["cov"] = max(worst["cov"], np.max(np.abs(cov - cov_o)) / max(1.0, np.max(np.abs(cov_o))))

        h = g.standard_exponential(n)
        draw = lr.bootstrap_draw(dm, y, h)
        draw_o = gauss_jordan_solve((p * h[:, None]).T @ p, p.T @ (h * y))
        worst["boot"] = max(worst["boot"], np.max(np.abs(draw - draw_o)) / max(1.0, np.max(np.abs(draw_o))))
    elapsed = time.time() - start
    ok = max(worst.values()) < 1e-9 and elapsed < 5.0
    _report(2, "normal-equation Gauss-Jordan oracles", ok,
            f"worst rel errs fit {worst['fit']:.1e} cov {worst['cov']:.1e} "
            f"boot {worst['boot']:.1e}, {elapsed:.1f}s")
    assert max(worst.values()) < 1e-9
    assert elapsed < 5.0


def test_criterion_03_orthogonality_decay():
    start = time.time()
    n = 200_000
    g = lr.RngStream(303).generator()
    z = g.standard_normal(n)
    s0 = 0.5 + 0.1 * np.tanh(z)
    mu0 = 1.0 + z
    d = (g.uniform(size=n) < s0).astype(float)
    y_obs = d * (mu0 + g.standard_normal(n))
    p = np.column_stack([np.ones(n), z])
    d_mu, d_s = 2.0, 0.25

    def robust_distortion(t):
        mu_t = mu0 + t * d_mu
        s_t = s0 + t * d_s
        base = mu0 + d * (y_obs - mu0) / s0
        pert = mu_t + d * (y_obs - mu_t) / s_t
        return float(np.linalg.norm(p.T @ (pert - base) / n))

    def ipw_distortion(t):
        s_t = s0 + t * d_s
        return float(np.linalg.norm(p.T @ (d * y_obs / s_t - d * y_obs / s0) / n))

    ratio_robust = robust_distortion(0.2) / robust_distortion(0.1)
    ratio_ipw = ipw_distortion(0.2) / ipw_distortion(0.1)
    elapsed = time.time() - start
    ok = 3.0 <= ratio_robust <= 5.0 and 1.7 <= ratio_ipw <= 2.3 and elapsed < 120.0
    _report(3, "orthogonality decay of moment distortions", ok,
            f"robust ratio {ratio_robust:.3f} in [3,5], ipw ratio {ratio_ipw:.3f} "
            f"in [1.7,2.3], {elapsed:.1f}s")
    assert 3.0 <= ratio_robust <= 5.0
    assert 1.7 <= ratio_ipw <= 2.3
    assert elapsed < 120.0


def test_criterion_04_variance_domination_within_quintiles():
    start = time.time()
    n = 100_000
    g = lr.RngStream(404).generator()
    z = g.standard_normal((n, 2))
    x1 = z[:, 0]
    mu0 = 2.0 + z[:, 0] + 0.5 * z[:, 1]
    s0 = 0.5 + 0.2 * np.tanh(z[:, 0] - 0.3 * z[:, 1])
    d = (g.uniform(size=n) < s0).astype(float)
    y_obs = d * (mu0 + g.standard_normal(n))
    robust = mu0 + d * (y_obs - mu0) / s0
    ipw = d * y_obs / s0
    edges = np.quantile(x1, [0.2, 0.4, 0.6, 0.8])
    bins = np.digitize(x1, edges)
    ratios = []
    for b in range(5):
        mask = bins == b
        ratios.append(robust[mask].var() / ipw[mask].var())
    elapsed = time.time() - start
    ok = all(r <= 1.02 for r in ratios) and elapsed < 60.0
    _report(4, "robust signal variance domination by quintile", ok,
            f"var ratios {np.round(ratios, 3).tolist()} all <= 1.02, {elapsed:.1f}s")
    assert all(r <= 1.02 for r in ratios)
    assert elapsed < 60.0


PAPER_T1_REJECTIONS = np.array([0.090, 0.100, 0.050, 0.050, 0.057])


def test_criterion_05_table1_scaled_preset():
    start = time.time()
    summary = lr.run_mc(
        lr.DesignConfig(n=500, dim_z=200, rho=0.5, c=0.1),
        reps=200, alpha=0.05, k_folds=5, rng=lr.RngStream(0),
    )
    elapsed = time.time() - start
    rej = summary.rejection["lre"][:5]
    ok = np.all(rej >= 0.02) and np.all(rej <= 0.12) and elapsed < 300.0
    _report(5, "scaled-down summary table (dimZ=200, R=200)", ok,
            f"lre rejections {np.round(rej, 3).tolist()} in [0.02, 0.12], {elapsed:.0f}s")
    assert np.all(rej >= 0.02)
    assert np.all(rej <= 0.12)
    assert elapsed < 300.0


def test_criterion_05_table1_paper_scale():
    start = time.time()
    summary = lr.run_mc(
        lr.DesignConfig(n=500, dim_z=500, rho=0.5, c=0.1),
        reps=300, alpha=0.05, k_folds=5, rng=lr.RngStream(0),
    )
    elapsed = time.time() - start
    bias = summary.bias["lre"][:5]
    rej = summary.rejection["lre"][:5]
    bias_ok = np.all(np.abs(bias) < 0.05)
    rej_ok = np.all(np.abs(rej - PAPER_T1_REJECTIONS) <= 0.06)
    ok = bias_ok and rej_ok and elapsed < 1800.0
    _report(5, "paper-scale summary table (dimZ=500, R=300)", ok,
            f"lre bias {np.round(bias, 3).tolist()} (<0.05), rejections "
            f"{np.round(rej, 3).tolist()} vs {PAPER_T1_REJECTIONS.tolist()} +-0.06, "
            f"{elapsed:.0f}s, failures {summary.n_failures}")
    assert bias_ok, f"lre bias out of band: {bias}"
    assert rej_ok, f"lre rejections out of band: {rej}"
    assert elapsed < 1800.0


def test_criterion_06_table2_qualitative():
    start = time.time()
    summary = lr.run_mc(
        lr.DesignConfig(n=500, dim_z=500, rho=0.5, c=20.0),
        reps=300, alpha=0.10, k_folds=5, rng=lr.RngStream(0),
    )
    elapsed = time.time() - start
    b_lre = summary.bias["lre"][1]
    b_ols = summary.bias["ols"][1]
    b_ipw = summary.bias["ipw"][1]
    bias_vs_ols = abs(b_lre) < abs(b_ols)
    bias_vs_ipw = abs(b_lre) < abs(b_ipw)
    rmse_ok = bool(np.all(summary.rmse["lre"][:5] < summary.rmse["ipw"][:5]))
    rej = summary.rejection["lre"][1]
    rej_ok = abs(rej - 0.12) <= 0.07
    ok = bias_vs_ols and bias_vs_ipw and rmse_ok and rej_ok
    _report(6, "large-misspecification qualitative comparison", ok,
            f"bias2: lre {b_lre:+.3f} ols {b_ols:+.3f} ipw {b_ipw:+.3f}; "
            f"rmse lre<ipw all5 {rmse_ok}; rej2 {rej:.3f} in 0.12+-0.07; {elapsed:.0f}s")
    assert bias_vs_ols, f"|bias_lre|={abs(b_lre):.4f} not below |bias_ols|={abs(b_ols):.4f}"
    assert bias_vs_ipw, f"|bias_lre|={abs(b_lre):.4f} not below |bias_ipw|={abs(b_ipw):.4f}"
    assert rmse_ok
    assert rej_ok


def test_criterion_07_uniform_band_coverage():
    start = time.time()
    reps = 200
    fs = FirstStageConfig(logistic_intercept=True)
    hits = 0
    grid = np.linspace(-2.0, 2.0, 25)
    spec = lr.BasisSpec(kind="polynomial", degree=1, ndim=1)
    for seed in range(reps):
        rng = lr.RngStream(700 + seed)
        g = rng.child(0).generator()
        n = 500
        z = g.standard_normal((n, 10))
        x = z[:, 0]
        y_star = x + g.standard_normal(n)
        d = (g.uniform(size=n) < 0.7).astype(float)
        data = lr.Dataset(y_obs=d * y_star, d=d, x=x, z=z)
        folds = lr.make_folds(n, 5, rng.child(1))
        cf = lr.crossfit_signals(data, folds, lr.SignalKind.ROBUST_MISSING, fs)
        dm = lr.design_matrix(data.x, spec)
        fit = lr.LREFit.from_design(dm, cf.yhat)
        band = lr.uniform_band(fit, dm, cf.yhat, grid, n_draws=200, alpha=0.05,
                               rng=rng.child(2))
        truth = grid  # g(x) = x exactly, and the basis nests it
        hits += bool(np.all((band.uniform_lo <= truth) & (truth <= band.uniform_hi)))
    coverage = hits / reps
    elapsed = time.time() - start
    ok = coverage >= 0.90 and elapsed < 600.0
    _report(7, "simultaneous band coverage at nominal 95%", ok,
            f"coverage {coverage:.3f} >= 0.90 over {reps} reps, {elapsed:.0f}s")
    assert coverage >= 0.90
    assert elapsed < 600.0


def test_criterion_08_first_stage_units():
    clauses = {}

    # lasso at zero penalty equals least squares within 1e-8
    g = lr.RngStream(808).generator()
    z = g.standard_normal((80, 3))
    y = z @ np.array([1.0, -0.5, 0.2]) + g.standard_normal(80)
    fit = lr.lasso_fit(z, y, None, 0.0, fit_intercept=True)
    ols = np.linalg.lstsq(np.column_stack([np.ones(80), z]), y, rcond=None)[0]
    clauses["lasso_ols"] = float(np.max(np.abs(
        np.concatenate([[fit.intercept], fit.coef]) - ols
    ))) < 1e-8

    # penalty at or above the subgradient threshold zeroes all coefficients
    w = np.ones(80)
    lam_max = float(np.max(np.abs(2.0 * z.T @ y)))
    fit_zero = lr.lasso_fit(z, y, w, lam_max, standardize=False, fit_intercept=False)
    clauses["lasso_deadzone"] = bool(np.all(fit_zero.coef == 0.0))

    # logistic lasso at zero penalty matches a damped-Newton oracle within 1e-6
    z1 = g.standard_normal((50, 1))
    dlab = (g.uniform(size=50) < _logistic(0.7 * z1[:, 0])).astype(float)
    pf = lr.logistic_lasso_fit(z1, dlab, 0.0, fit_intercept=False, tol=1e-14,
                               max_iter=50_000)
    oracle = newton_logistic_mle(z1, dlab)
    clauses["logistic_newton"] = abs(pf.coef[0] - oracle[0]) < 1e-6

    # kernel score vs the analytic standard normal score on [-2, 2]
    u = lr.RngStream(809).generator().standard_normal(50_000)
    score_fit = lr.fit_density_score(u, adaptive=True)
    grid = np.linspace(-2.0, 2.0, 81)
    sup_err = float(np.max(np.abs(score_fit.log_gradient(grid) + grid)))
    clauses["kde_score"] = sup_err < 0.1

    ok = all(clauses.values())
    _report(8, "first-stage unit correctness", ok,
            f"clauses {clauses}, kde sup err {sup_err:.3f} (tolerance 0.1)")
    assert clauses["lasso_ols"]
    assert clauses["lasso_deadzone"]
    assert clauses["logistic_newton"]
    # Known-infeasible tolerance: the score noise floor of a Gaussian-kernel
    # density with a Silverman pilot at n = 50k is ~0.2-0.3 in sup norm on
    # [-2, 2] (the reference adaptive estimator behaves the same); asserted
    # as stated so the gap stays visible.
    assert clauses["kde_score"], (
        f"kde score sup error {sup_err:.3f} exceeds the stated 0.1; see the "
        "decisions ledger: the tolerance is below the estimator's noise floor "
        "at this sample size"
    )


def test_criterion_09_numeric_kernels_and_band_csv(tmp_path):
    # normal quantile vs the high-precision oracle on 1e4 points
    us = np.concatenate([
        np.linspace(1e-7, 1 - 1e-7, 9_000),
        np.geomspace(1e-12, 1e-3, 500),
        1.0 - np.geomspace(1e-12, 1e-3, 500),
    ])
    worst = 0.0
    for u in us:
        worst = max(worst, abs(lr.normal_quantile(float(u)) - mpmath_normal_quantile(float(u))))
    quantile_ok = worst < 1e-8

    # band CSV emitted through the CLI keeps uniform ⊇ pointwise on every row
    from lrseries.cli import main

    data = lr.gen_design(lr.DesignConfig(n=300, dim_z=20, c=0.1), lr.RngStream(909))
    frame = {"y_o": data.y_obs, "d": data.d.astype(int)}
    frame["x1"] = data.x[:, 0]
    for j in range(20):
        frame[f"z{j + 1}"] = data.z[:, j]
    csv_in = tmp_path / "fixture.csv"
    pd.DataFrame(frame).to_csv(csv_in, index=False)
    out_csv = tmp_path / "band.csv"
    out_json = tmp_path / "band.json"
    config = {
        "seed": 3,
        "data": {"input": str(csv_in)},
        "estimate": {"kind": "robust_missing", "folds": 5},
        "band": {
            "grid": {"min": -2.0, "max": 2.0, "points": 15},
            "bootstrap": 500, "alpha": 0.05,
            "out_csv": str(out_csv), "out_json": str(out_json),
        },
    }
    import yaml

    cfg_path = tmp_path / "cfg.yaml"
    cfg_path.write_text(yaml.safe_dump(config))
    code = main(["band", "--config", str(cfg_path)])
    rows = pd.read_csv(out_csv)
    nest_ok = bool(
        np.all(rows["unif_lo"] <= rows["pw_lo"] + 1e-12)
        and np.all(rows["pw_lo"] <= rows["g_hat"])
        and np.all(rows["g_hat"] <= rows["pw_hi"])
        and np.all(rows["pw_hi"] <= rows["unif_hi"] + 1e-12)
    )
    meta = json.loads(out_json.read_text())
    ok = quantile_ok and code == 0 and nest_ok and meta["B"] == 500
    _report(9, "numeric kernels and emitted band invariants", ok,
            f"quantile worst abs err {worst:.2e} (<1e-8), band rows nested {nest_ok}")
    assert quantile_ok
    assert code == 0
    assert nest_ok
