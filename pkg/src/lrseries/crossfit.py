"""K-fold cross-fitting: nuisances are estimated on each fold's complement
and evaluated out-of-fold, so every signal value is built from fits that
never saw its own row.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DomainError, FoldDegeneracyError
from .first_stage import (
    DensityScoreFit,
    LassoFit,
    PropensityFit,
    default_penalty,
    fit_density_score,
    lasso_fit,
    logistic_lasso_fit,
)
from .numerics import RngStream
from .signals import NuisanceValues, SignalKind, build_signals

__all__ = [
    "Dataset",
    "FoldAssignment",
    "make_folds",
    "FirstStageConfig",
    "NuisanceBundle",
    "CrossfitResult",
    "crossfit_signals",
]


@dataclass
class Dataset:
    """Aligned per-observation records.

    ``y_obs`` is the observed outcome, ``d`` the binary presence/treatment
    indicator, ``x`` the (N, r) covariates of interest and ``z`` the (N, p)
    controls.  ``t`` is the randomized-treatment indicator used by the
    experiment-with-missingness estimand, ``w`` the regressor whose partial
    derivative the average-derivative estimand targets, and ``y_star`` the
    latent outcome when a simulation knows it.
    """

    y_obs: np.ndarray
    d: np.ndarray
    x: np.ndarray
    z: np.ndarray
    t: np.ndarray | None = None
    w: np.ndarray | None = None
    y_star: np.ndarray | None = None

    def __post_init__(self):
        self.y_obs = np.asarray(self.y_obs, dtype=float).ravel()
        self.d = np.asarray(self.d, dtype=float).ravel()
        self.x = np.atleast_2d(np.asarray(self.x, dtype=float))
        if self.x.shape[0] == 1 and self.y_obs.shape[0] != 1:
            self.x = self.x.T
        self.z = np.atleast_2d(np.asarray(self.z, dtype=float))
        if self.z.shape[0] == 1 and self.y_obs.shape[0] != 1:
            self.z = self.z.T
        n = self.y_obs.shape[0]
        for name in ("t", "w", "y_star"):
            val = getattr(self, name)
            if val is not None:
                val = np.asarray(val, dtype=float).ravel()
                if val.shape[0] != n:
                    raise DomainError(f"column {name!r} has length {val.shape[0]}, expected {n}")
                setattr(self, name, val)
        if self.d.shape[0] != n or self.x.shape[0] != n or self.z.shape[0] != n:
            raise DomainError("dataset columns are not aligned")
        for name, arr in (("y_obs", self.y_obs), ("x", self.x), ("z", self.z)):
            if not np.all(np.isfinite(arr)):
                raise DomainError(f"column {name!r} contains non-finite values")
        if not np.all((self.d == 0.0) | (self.d == 1.0)):
            raise DomainError("presence indicator d must be binary 0/1")
        if self.t is not None and not np.all((self.t == 0.0) | (self.t == 1.0)):
            raise DomainError("treatment indicator t must be binary 0/1")

    @property
    def n_obs(self) -> int:
        return self.y_obs.shape[0]


@dataclass(frozen=True)
class FoldAssignment:
    """Partition of row indices into K folds of near-equal size."""

    fold_of: np.ndarray
    n_folds: int

    def rows(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of == k)

    def complement(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of != k)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.fold_of, minlength=self.n_folds)


def make_folds(n: int, k: int, rng: RngStream) -> FoldAssignment:
    """Uniform random balanced partition, reproducible from the stream.

    Fold sizes differ by at most one; when K does not divide N the leftover
    rows go one per fold to the first ``N mod K`` folds after shuffling.
    """
    n = int(n)
    k = int(k)
    if not 2 <= k <= n:
        raise DomainError(f"need 2 <= K <= N, got K={k}, N={n}")
    perm = rng.generator().permutation(n)
    base, extra = divmod(n, k)
    fold_of = np.empty(n, dtype=np.int64)
    start = 0
    for fold in range(k):
        size = base + (1 if fold < extra else 0)
        fold_of[perm[start : start + size]] = fold
        start += size
    return FoldAssignment(fold_of=fold_of, n_folds=k)


@dataclass(frozen=True, eq=False)
class FirstStageConfig:
    """First-stage settings shared by all folds.

    ``lam=None`` resolves to the default penalty with N equal to the rows the
    fit actually sees and p that regression's feature count; the logistic
    fits use ``logistic_penalty_scale`` times that level (half by default,
    the usual curvature adjustment: the logistic loss has at most a quarter
    of the squared loss's curvature).  Intercepts are off by default to
    match the penalized objectives as displayed; enable them for data that
    are not centered.  The ``*_override`` fields replace an estimated
    nuisance with a constant or a full-length per-row array; they exist for
    diagnostics and for tests that feed true nuisance values through the
    pipeline.
    """

    lam: float | None = None
    logistic_penalty_scale: float = 0.5
    trim_floor: float = 0.02
    adaptive_kde: bool = True
    lasso_intercept: bool = False
    logistic_intercept: bool = False
    standardize: bool = True
    capd_quadratic: bool = True
    mu_override: float | np.ndarray | None = None
    mu1_override: float | np.ndarray | None = None
    mu0_override: float | np.ndarray | None = None
    s_override: float | np.ndarray | None = None
    h_override: float | np.ndarray | None = None
    dlogf_override: float | np.ndarray | None = None
    dmu_override: float | np.ndarray | None = None


def _resolve_override(value, rows: np.ndarray) -> np.ndarray | None:
    if value is None:
        return None
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(rows.shape[0], float(arr))
    return arr[rows]


def _penalty(config: FirstStageConfig, n: int, p: int) -> float:
    return default_penalty(n, p) if config.lam is None else float(config.lam)


def _capd_reg_features(data: Dataset, rows: np.ndarray, quadratic: bool) -> np.ndarray:
    w = data.w[rows, None]
    blocks = [w, w * w] if quadratic else [w]
    return np.hstack(blocks + [data.x[rows], data.z[rows]])


def _capd_controls(data: Dataset, rows: np.ndarray) -> np.ndarray:
    return np.hstack([data.x[rows], data.z[rows]])


@dataclass(eq=False)
class NuisanceBundle:
    """Fitted first-stage objects for one fold, evaluable at any rows."""

    kind: SignalKind
    config: FirstStageConfig
    mu_fit: LassoFit | None = None
    mu1_fit: LassoFit | None = None
    mu0_fit: LassoFit | None = None
    prop_fit: PropensityFit | None = None
    h_fit: PropensityFit | None = None
    capd_reg: LassoFit | None = None
    density_fit: DensityScoreFit | None = None
    penalties: dict = field(default_factory=dict)
    trim_bound_rows: int = 0
    eval_rows: int = 0

    def evaluate(self, data: Dataset, rows: np.ndarray) -> NuisanceValues:
        cfg = self.config
        out = NuisanceValues()
        kind = self.kind
        if kind in (SignalKind.ROBUST_MISSING, SignalKind.IPW_MISSING,
                    SignalKind.ROBUST_CATE, SignalKind.IPW_CATE):
            out.s = _resolve_override(cfg.s_override, rows)
            if out.s is None:
                out.s = self.prop_fit.predict(data.z[rows])
                self.trim_bound_rows += int(self.prop_fit.trim_binding(data.z[rows]).sum())
            self.eval_rows += rows.shape[0]
        if kind is SignalKind.ROBUST_MISSING:
            out.mu = _resolve_override(cfg.mu_override, rows)
            if out.mu is None:
                out.mu = self.mu_fit.predict(data.z[rows])
        if kind in (SignalKind.ROBUST_CATE, SignalKind.ROBUST_CATE_MISSING):
            out.mu1 = _resolve_override(cfg.mu1_override, rows)
            if out.mu1 is None:
                out.mu1 = self.mu1_fit.predict(data.z[rows])
            out.mu0 = _resolve_override(cfg.mu0_override, rows)
            if out.mu0 is None:
                out.mu0 = self.mu0_fit.predict(data.z[rows])
        if kind is SignalKind.ROBUST_CATE_MISSING:
            out.s = _resolve_override(cfg.s_override, rows)
            if out.s is None:
                zt = np.hstack([data.z[rows], data.t[rows, None]])
                out.s = self.prop_fit.predict(zt)
                self.trim_bound_rows += int(self.prop_fit.trim_binding(zt).sum())
            out.h = _resolve_override(cfg.h_override, rows)
            if out.h is None:
                out.h = self.h_fit.predict(data.z[rows])
                self.trim_bound_rows += int(self.h_fit.trim_binding(data.z[rows]).sum())
            self.eval_rows += rows.shape[0]
        if kind is SignalKind.ROBUST_CAPD:
            out.mu = _resolve_override(cfg.mu_override, rows)
            out.dmu = _resolve_override(cfg.dmu_override, rows)
            if out.mu is None or out.dmu is None:
                feats = _capd_reg_features(data, rows, cfg.capd_quadratic)
                mu_hat = self.capd_reg.predict(feats)
                coef = self.capd_reg.coef
                if cfg.capd_quadratic:
                    dmu_hat = coef[0] + 2.0 * coef[1] * data.w[rows]
                else:
                    dmu_hat = np.full(rows.shape[0], coef[0])
                if out.mu is None:
                    out.mu = mu_hat
                if out.dmu is None:
                    out.dmu = dmu_hat
            out.dlogf = _resolve_override(cfg.dlogf_override, rows)
            if out.dlogf is None:
                resid = data.w[rows] - self.density_fit.regression.predict(
                    _capd_controls(data, rows)
                )
                out.dlogf = self.density_fit.log_gradient(resid)
            self.eval_rows += rows.shape[0]
        return out


def _fit_bundle(
    data: Dataset, rows: np.ndarray, kind: SignalKind, config: FirstStageConfig, fold: int,
) -> NuisanceBundle:
    bundle = NuisanceBundle(kind=kind, config=config)
    n_c = rows.shape[0]
    two_sided = kind in (SignalKind.ROBUST_CATE, SignalKind.IPW_CATE)

    def fit_prop(feats: np.ndarray, labels: np.ndarray, name: str,
                 force_two_sided: bool) -> PropensityFit:
        if labels.min() == labels.max():
            raise FoldDegeneracyError(
                f"fold {fold}: complement has a single class for the {name} fit", fold=fold,
            )
        lam = _penalty(config, n_c, feats.shape[1])
        if config.lam is None:
            lam *= config.logistic_penalty_scale
        bundle.penalties[name] = lam
        return logistic_lasso_fit(
            feats, labels, lam,
            fit_intercept=config.logistic_intercept,
            standardize=config.standardize,
            trim_floor=config.trim_floor,
            two_sided=force_two_sided,
        )

    def fit_reg(feats: np.ndarray, y: np.ndarray, weights: np.ndarray | None,
                name: str, desc: str) -> LassoFit:
        if weights is not None and not np.any(weights > 0.0):
            raise FoldDegeneracyError(
                f"fold {fold}: no rows with positive weight for the {name} fit", fold=fold,
            )
        lam = _penalty(config, n_c, feats.shape[1])
        bundle.penalties[name] = lam
        return lasso_fit(
            feats, y, weights, lam,
            standardize=config.standardize,
            fit_intercept=config.lasso_intercept,
            weight_desc=desc,
        )

    if kind in (SignalKind.ROBUST_MISSING, SignalKind.IPW_MISSING,
                SignalKind.ROBUST_CATE, SignalKind.IPW_CATE):
        if config.s_override is None:
            bundle.prop_fit = fit_prop(data.z[rows], data.d[rows], "propensity", two_sided)
    if kind is SignalKind.ROBUST_MISSING and config.mu_override is None:
        bundle.mu_fit = fit_reg(
            data.z[rows], data.y_obs[rows], data.d[rows], "regression",
            "observed rows (d == 1)",
        )
    if kind is SignalKind.ROBUST_CATE:
        if config.mu1_override is None:
            bundle.mu1_fit = fit_reg(
                data.z[rows], data.y_obs[rows], data.d[rows], "regression_treated",
                "treated rows (d == 1)",
            )
        if config.mu0_override is None:
            bundle.mu0_fit = fit_reg(
                data.z[rows], data.y_obs[rows], 1.0 - data.d[rows], "regression_control",
                "control rows (d == 0)",
            )
    if kind is SignalKind.ROBUST_CATE_MISSING:
        if data.t is None:
            raise DomainError("dataset lacks the treatment column required by this kind")
        if config.s_override is None:
            zt = np.hstack([data.z[rows], data.t[rows, None]])
            bundle.prop_fit = fit_prop(zt, data.d[rows], "presence", False)
        if config.h_override is None:
            bundle.h_fit = fit_prop(data.z[rows], data.t[rows], "treatment", True)
        if config.mu1_override is None:
            bundle.mu1_fit = fit_reg(
                data.z[rows], data.y_obs[rows], data.d[rows] * data.t[rows],
                "regression_treated", "observed treated rows (d == 1, t == 1)",
            )
        if config.mu0_override is None:
            bundle.mu0_fit = fit_reg(
                data.z[rows], data.y_obs[rows], data.d[rows] * (1.0 - data.t[rows]),
                "regression_control", "observed control rows (d == 1, t == 0)",
            )
    if kind is SignalKind.ROBUST_CAPD:
        if data.w is None:
            raise DomainError("dataset lacks the derivative-variable column required by this kind")
        need_reg = config.mu_override is None or config.dmu_override is None
        if need_reg:
            feats = _capd_reg_features(data, rows, config.capd_quadratic)
            bundle.capd_reg = fit_reg(
                feats, data.y_obs[rows], data.d[rows], "regression", "observed rows",
            )
        if config.dlogf_override is None:
            controls = _capd_controls(data, rows)
            lreg = fit_reg(controls, data.w[rows], None, "location", "all rows")
            resid = data.w[rows] - lreg.predict(controls)
            bundle.density_fit = fit_density_score(
                resid, adaptive=config.adaptive_kde, regression=lreg,
            )
    return bundle


@dataclass
class CrossfitResult:
    """Cross-fitted signals plus the per-fold bundles that produced them."""

    yhat: np.ndarray
    bundles: list[NuisanceBundle]
    folds: FoldAssignment
    kind: SignalKind

    @property
    def trim_binding_fraction(self) -> float:
        bound = sum(b.trim_bound_rows for b in self.bundles)
        total = sum(b.eval_rows for b in self.bundles)
        return bound / total if total else 0.0

    @property
    def penalties(self) -> list[dict]:
        return [dict(b.penalties) for b in self.bundles]


def crossfit_signals(
    data: Dataset,
    folds: FoldAssignment,
    kind: SignalKind,
    config: FirstStageConfig | None = None,
) -> CrossfitResult:
    """Fit nuisances on each fold complement and build out-of-fold signals.

    Returns the signal vector aligned to the original row order together with
    all K bundles (kept for covariance work and re-evaluation on band grids).
    """
    kind = SignalKind(kind)
    config = config or FirstStageConfig()
    if folds.fold_of.shape[0] != data.n_obs:
        raise DomainError("fold assignment does not match the dataset size")
    yhat = np.empty(data.n_obs)
    bundles: list[NuisanceBundle] = []
    for k in range(folds.n_folds):
        held_out = folds.rows(k)
        bundle = _fit_bundle(data, folds.complement(k), kind, config, fold=k)
        values = bundle.evaluate(data, held_out)
        slice_view = _DatasetRows(data, held_out)
        yhat[held_out] = build_signals(slice_view, values, kind)
        bundles.append(bundle)
    return CrossfitResult(yhat=yhat, bundles=bundles, folds=folds, kind=kind)


class _DatasetRows:
    """Row-sliced view of a dataset for signal construction."""

    def __init__(self, data: Dataset, rows: np.ndarray):
        self.y_obs = data.y_obs[rows]
        self.d = data.d[rows]
        self.t = data.t[rows] if data.t is not None else None
        self.w = data.w[rows] if data.w is not None else None


def with_overrides(config: FirstStageConfig, **overrides) -> FirstStageConfig:
    """Convenience for tests/diagnostics: a config with nuisances replaced."""
    return replace(config, **overrides)
