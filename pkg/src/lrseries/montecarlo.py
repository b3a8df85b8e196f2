"""Simulation harness: sparse-logistic missing-outcome data generation, the
three competing estimators (complete-case OLS, IPW, locally robust), and the
bias / standard error / RMSE / rejection-frequency summary tables.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .basis import BasisSpec, design_matrix
from .crossfit import CrossfitResult, Dataset, FirstStageConfig, crossfit_signals, make_folds
from .errors import DomainError, EstimationError
from .lre import estimate_covariance, fit_lre
from .numerics import RngStream, normal_quantile, solve_spd, symmetrize, toeplitz_correlation, toeplitz_gaussian
from .signals import SignalKind

__all__ = [
    "DesignConfig",
    "gen_design",
    "true_blp",
    "McSummary",
    "run_mc",
    "worker_count",
]

ESTIMATORS = ("ols", "ipw", "lre")


def worker_count(requested: int | None = None) -> int:
    """Worker cap: explicit argument, else LRE_THREADS, else the CPU count."""
    if requested is not None:
        return max(1, int(requested))
    env = os.environ.get("LRE_THREADS", "")
    if env.strip():
        return max(1, int(env))
    return max(1, os.cpu_count() or 1)


@dataclass(frozen=True)
class DesignConfig:
    """Missing-outcome data generating process with sparse logistic presence.

    Controls are N(0, T(rho)) with Toeplitz correlation ``rho^|j-k|``; the
    presence indicator is Bernoulli with logistic probability in the controls
    (pattern 1/j on the first ``delta_support`` coordinates); the latent
    outcome is linear in the controls with pattern 1/j^2 on the leading
    coordinates and ``c / j^2`` on coordinates ``n_interest .. theta_support``
    (the misspecification knob), plus unit normal noise.  The covariates of
    interest are the first ``n_interest`` controls.
    """

    n: int = 500
    dim_z: int = 500
    rho: float = 0.5
    c: float = 0.1
    n_interest: int = 6
    delta_support: int = 100
    theta_support: int = 300
    delta_scale: float = 1.0
    full_presence: bool = False

    def __post_init__(self):
        if self.n_interest > self.dim_z:
            raise DomainError("n_interest cannot exceed dim_z")
        if not abs(self.rho) < 1.0:
            raise DomainError("|rho| must be below 1")
        if self.n < 2:
            raise DomainError("need n >= 2")

    def delta(self) -> np.ndarray:
        j = np.arange(1, self.dim_z + 1, dtype=float)
        out = np.where(j <= self.delta_support, 1.0 / j, 0.0)
        return self.delta_scale * out

    def theta(self) -> np.ndarray:
        j = np.arange(1, self.dim_z + 1, dtype=float)
        lead = j < self.n_interest
        mid = (j >= self.n_interest) & (j <= self.theta_support)
        return np.where(lead, 1.0 / j**2, np.where(mid, self.c / j**2, 0.0))

    def population_r2(self) -> float:
        theta = self.theta()
        var_g = float(theta @ toeplitz_correlation(self.dim_z, self.rho) @ theta)
        return var_g / (var_g + 1.0)


def _logistic(t: np.ndarray) -> np.ndarray:
    out = np.empty_like(t)
    pos = t >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def gen_design(config: DesignConfig, rng: RngStream) -> Dataset:
    """Draw one dataset from the configured process.

    Substreams: controls from child(0), presence uniforms from child(1),
    outcome noise from child(2) — so components can be reproduced separately.
    """
    z = toeplitz_gaussian(config.n, config.dim_z, config.rho, rng.child(0))
    if config.full_presence:
        d = np.ones(config.n)
    else:
        probs = _logistic(z @ config.delta())
        d = (rng.child(1).generator().uniform(size=config.n) < probs).astype(float)
    eps = rng.child(2).generator().standard_normal(config.n)
    y_star = z @ config.theta() + eps
    return Dataset(
        y_obs=d * y_star,
        d=d,
        x=z[:, : config.n_interest],
        z=z,
        y_star=y_star,
    )


def true_blp(config: DesignConfig) -> np.ndarray:
    """Population projection coefficients of the target on the covariates of
    interest, from the closed-form Gaussian moments.

    With regressors ``p(x) = x`` (no constant: everything is centered) the
    projection solves ``Cov(X) beta = Cov(X, Z) theta``; both blocks read off
    the Toeplitz correlation matrix.
    """
    corr = toeplitz_correlation(config.dim_z, config.rho)
    d = config.n_interest
    sxx = corr[:d, :d]
    sxz = corr[:d, :]
    return solve_spd(symmetrize(sxx), sxz @ config.theta())


def _mc_basis(config: DesignConfig) -> BasisSpec:
    return BasisSpec(
        kind="polynomial", degree=1, ndim=config.n_interest, include_intercept=False,
    )


def _weighted_series(p: np.ndarray, y: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Weighted normal equations plus heteroskedasticity-robust standard errors.

    ``beta = (E_N w p p')^{-1} E_N w p y``; the variance is the sandwich
    ``A^{-1} [E_N w^2 p p' r^2] A^{-1} / N`` with ``A = E_N w p p'`` and
    ``r`` the weighted-fit residual.
    """
    n = p.shape[0]
    a = symmetrize((p * w[:, None]).T @ p / n)
    b = p.T @ (w * y) / n
    beta = solve_spd(a, b)
    wresid = w * (y - p @ beta)
    meat = (p * wresid[:, None] ** 2).T @ p / n
    cov = solve_spd(a, solve_spd(a, symmetrize(meat)).T).T
    se = np.sqrt(np.maximum(np.diag(cov), 0.0) / n)
    return beta, se


def _out_of_fold_propensity(data: Dataset, cf: CrossfitResult) -> np.ndarray:
    s = np.empty(data.n_obs)
    for k, bundle in enumerate(cf.bundles):
        rows = cf.folds.rows(k)
        if bundle.config.s_override is not None:
            ov = np.asarray(bundle.config.s_override, dtype=float)
            s[rows] = float(ov) if ov.ndim == 0 else ov[rows]
        else:
            s[rows] = bundle.prop_fit.predict(data.z[rows])
    return s


def _single_rep(
    config: DesignConfig,
    stream: RngStream,
    estimators: tuple[str, ...],
    k_folds: int,
    first_stage: FirstStageConfig,
) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """One replication: returns (estimate, standard error) per estimator."""
    data = gen_design(config, stream)
    dm = design_matrix(data.x, _mc_basis(config))
    p = dm.values
    out: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    needs_crossfit = "lre" in estimators or "ipw" in estimators
    cf = None
    if needs_crossfit:
        folds = make_folds(data.n_obs, k_folds, stream.child(3))
        cf = crossfit_signals(data, folds, SignalKind.ROBUST_MISSING, first_stage)
    if "ols" in estimators:
        out["ols"] = _weighted_series(p, data.y_obs, data.d)
    if "ipw" in estimators:
        s_hat = _out_of_fold_propensity(data, cf)
        out["ipw"] = _weighted_series(p, data.y_obs, data.d / s_hat)
    if "lre" in estimators:
        coef = fit_lre(dm, cf.yhat)
        cov = estimate_covariance(dm, cf.yhat, coef)
        se = np.sqrt(np.maximum(np.diag(cov), 0.0) / data.n_obs)
        out["lre"] = (coef, se)
    return out


@dataclass
class McSummary:
    """Per-coefficient bias, spread, RMSE and rejection rate per estimator.

    The spread is the population (ddof=0) standard deviation across
    replications, so ``rmse^2 = bias^2 + sd^2`` holds as an identity.  Tests
    are two-sided t-tests of the oracle projection coefficients at ``alpha``
    using each estimator's sandwich standard errors.
    """

    config: DesignConfig
    reps: int
    alpha: float
    k_folds: int
    beta0: np.ndarray
    estimators: tuple[str, ...]
    estimates: dict[str, np.ndarray]
    bias: dict[str, np.ndarray]
    sd: dict[str, np.ndarray]
    rmse: dict[str, np.ndarray]
    rejection: dict[str, np.ndarray]
    n_failures: int = 0
    r_squared: float = field(default=float("nan"))

    def coef_labels(self) -> list[str]:
        return [f"beta{j + 1}" for j in range(self.beta0.shape[0])]

    def to_frame(self, n_coef: int | None = None):
        """Table in the row/column layout of the reference summaries:
        one row per reported coefficient, column groups Bias / StError /
        RMSE / RejFreq, one column per estimator inside each group."""
        import pandas as pd

        n_coef = n_coef if n_coef is not None else min(5, self.beta0.shape[0])
        rows = []
        for j in range(n_coef):
            row = {"coef": self.coef_labels()[j], "oracle": self.beta0[j]}
            for stat, store in (
                ("bias", self.bias), ("st_error", self.sd),
                ("rmse", self.rmse), ("rej_freq", self.rejection),
            ):
                for est in self.estimators:
                    row[f"{stat}_{est}"] = store[est][j]
            rows.append(row)
        return pd.DataFrame(rows)

    def to_csv(self, path, n_coef: int | None = None) -> None:
        self.to_frame(n_coef).to_csv(path, index=False)

    def to_dict(self) -> dict:
        return {
            "design": {
                "n": self.config.n, "dim_z": self.config.dim_z,
                "rho": self.config.rho, "c": self.config.c,
                "n_interest": self.config.n_interest,
            },
            "reps": self.reps,
            "alpha": self.alpha,
            "k_folds": self.k_folds,
            "oracle_beta0": self.beta0.tolist(),
            "population_r_squared": self.r_squared,
            "n_failures": self.n_failures,
            "estimators": list(self.estimators),
            "bias": {k: v.tolist() for k, v in self.bias.items()},
            "st_error": {k: v.tolist() for k, v in self.sd.items()},
            "rmse": {k: v.tolist() for k, v in self.rmse.items()},
            "rejection": {k: v.tolist() for k, v in self.rejection.items()},
        }


def run_mc(
    config: DesignConfig,
    reps: int,
    alpha: float = 0.05,
    estimators: tuple[str, ...] = ESTIMATORS,
    k_folds: int = 5,
    rng: RngStream | None = None,
    first_stage: FirstStageConfig | None = None,
    n_jobs: int | None = None,
    max_extra_reps: int = 50,
) -> McSummary:
    """Run the Monte Carlo comparison and aggregate to a summary.

    Replication ``r`` draws everything from ``rng.child(r)``, so results are
    bit-reproducible for a fixed (seed, config, reps, folds) regardless of
    worker count.  Replications that fail with an estimation error (fold
    degeneracy, singular Gram) are resampled on fresh substreams
    ``child(reps), child(reps + 1), ...`` and counted.
    """
    if reps < 2:
        raise DomainError("need at least 2 replications")
    unknown = set(estimators) - set(ESTIMATORS)
    if unknown:
        raise DomainError(f"unknown estimators: {sorted(unknown)}")
    rng = rng or RngStream(0)
    first_stage = first_stage or FirstStageConfig()
    beta0 = true_blp(config)
    z_crit = normal_quantile(1.0 - alpha / 2.0)

    def attempt(stream: RngStream):
        try:
            return _single_rep(config, stream, tuple(estimators), k_folds, first_stage)
        except EstimationError:
            return None

    n_workers = min(worker_count(n_jobs), reps)
    streams = [rng.child(r) for r in range(reps)]
    if n_workers > 1:
        from joblib import Parallel, delayed

        results = Parallel(n_jobs=n_workers)(delayed(attempt)(s) for s in streams)
    else:
        results = [attempt(s) for s in streams]

    failures = sum(r is None for r in results)
    results = [r for r in results if r is not None]
    next_stream = reps
    while len(results) < reps:
        if next_stream - reps >= max_extra_reps:
            raise EstimationError(
                f"too many failed replications ({failures}); design appears degenerate"
            )
        res = attempt(rng.child(next_stream))
        next_stream += 1
        if res is None:
            failures += 1
        else:
            results.append(res)

    estimates: dict[str, np.ndarray] = {}
    bias: dict[str, np.ndarray] = {}
    sd: dict[str, np.ndarray] = {}
    rmse: dict[str, np.ndarray] = {}
    rejection: dict[str, np.ndarray] = {}
    for est in estimators:
        stack = np.stack([r[est][0] for r in results])
        ses = np.stack([r[est][1] for r in results])
        estimates[est] = stack
        err = stack - beta0[None, :]
        bias[est] = err.mean(axis=0)
        sd[est] = stack.std(axis=0, ddof=0)
        rmse[est] = np.sqrt((err**2).mean(axis=0))
        tstats = np.abs(err) / ses
        rejection[est] = (tstats > z_crit).mean(axis=0)

    return McSummary(
        config=config,
        reps=reps,
        alpha=alpha,
        k_folds=k_folds,
        beta0=beta0,
        estimators=tuple(estimators),
        estimates=estimates,
        bias=bias,
        sd=sd,
        rmse=rmse,
        rejection=rejection,
        n_failures=failures,
        r_squared=config.population_r2(),
    )
