"""Nuisance-parameter estimators for the first stage.

Three estimators live here:

* :func:`lasso_fit` — L1-penalized linear regression by cyclic coordinate
  descent, minimizing ``sum_i w_i (y_i - z_i'theta)^2 + lam * ||theta||_1``
  on (optionally) standardized columns.
* :func:`logistic_lasso_fit` — L1-penalized logistic regression by proximal
  gradient with backtracking, minimizing
  ``sum_i [log(1 + exp(z_i'delta)) - d_i z_i'delta] + lam * ||delta||_1``.
* :func:`fit_density_score` — Gaussian-kernel density of a residual sample
  with a Silverman pilot bandwidth and optional square-root adaptive
  per-point bandwidths, exposing the log-density derivative.

The default penalty level is ``1.1 * sqrt(N) * Phi^{-1}(1 - 0.05 / max(N,
p * log N))``, shared by both penalized fits.  Intercepts, when requested,
are never penalized.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateFitError, DomainError, TailExtrapolationError
from .numerics import normal_quantile

__all__ = [
    "default_penalty",
    "LassoFit",
    "lasso_fit",
    "PropensityFit",
    "logistic_lasso_fit",
    "predict_propensity",
    "DensityScoreFit",
    "fit_density_score",
    "eval_log_density_derivative",
]

_SQRT_2PI = math.sqrt(2.0 * math.pi)


def default_penalty(n: int, p: int) -> float:
    """Penalty level ``1.1 * sqrt(N) * Phi^{-1}(1 - 0.05 / max(N, p log N))``.

    ``log`` is natural; the max keeps the tail probability shrinking in both
    the sample size and the regressor count.
    """
    n = int(n)
    p = int(p)
    if n < 2 or p < 1:
        raise DomainError(f"default_penalty requires n >= 2 and p >= 1, got {n}, {p}")
    denom = max(float(n), p * math.log(n))
    return 1.1 * math.sqrt(n) * normal_quantile(1.0 - 0.05 / denom)


def _soft_threshold(value: float, cut: float) -> float:
    if value > cut:
        return value - cut
    if value < -cut:
        return value + cut
    return 0.0


def _column_stats(z: np.ndarray, w: np.ndarray, center: bool) -> tuple[np.ndarray, np.ndarray]:
    """Weighted column means and standard deviations (about the weighted mean)."""
    wsum = w.sum()
    means = (w @ z) / wsum
    var = (w @ (z - means) ** 2) / wsum
    scales = np.sqrt(var)
    if not center:
        means = np.zeros_like(means)
    return means, scales


@dataclass
class LassoFit:
    """Fitted L1-penalized linear regression.

    Coefficients are reported on the original column scale; soft-thresholded
    coordinates are exact zeros.  ``objective_path`` records the penalized
    objective after every coordinate sweep (it never increases).
    """

    coef: np.ndarray
    intercept: float
    lam: float
    col_means: np.ndarray
    col_scales: np.ndarray
    converged: bool
    n_sweeps: int
    objective_path: np.ndarray
    weight_desc: str = ""

    def predict(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        return z @ self.coef + self.intercept


def lasso_fit(
    z: np.ndarray,
    y: np.ndarray,
    row_weights: np.ndarray | None = None,
    lam: float = 0.0,
    *,
    standardize: bool = True,
    fit_intercept: bool = True,
    tol: float = 1e-7,
    max_sweeps: int = 10_000,
    weight_desc: str = "",
) -> LassoFit:
    """Cyclic coordinate descent for the weighted lasso.

    Minimizes ``sum_i w_i (y_i - z_i'theta)^2 + lam * ||theta||_1`` where the
    penalty acts on the standardized scale when ``standardize`` is set (so
    effectively each original coefficient is penalized proportionally to its
    column deviation).  Convergence is declared when the largest coefficient
    change in a full sweep drops below ``tol`` (standardized scale); hitting
    ``max_sweeps`` first flags the fit instead of failing silently.
    """
    z = np.asarray(z, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if z.ndim != 2 or z.shape[0] != y.shape[0]:
        raise DomainError(f"design/response shapes disagree: {z.shape} vs {y.shape}")
    n, p = z.shape
    if row_weights is None:
        w = np.ones(n)
    else:
        w = np.asarray(row_weights, dtype=float).ravel()
        if w.shape[0] != n:
            raise DomainError("row_weights length must match the number of rows")
        if np.any(w < 0.0):
            raise DomainError("row_weights must be nonnegative")
    if not np.any(w > 0.0):
        raise DomainError("all row weights are zero: nothing to fit")
    if lam < 0.0:
        raise DomainError("lam must be nonnegative")

    means, scales = _column_stats(z, w, center=fit_intercept)
    if standardize:
        safe = np.where(scales > 1e-12 * (1.0 + np.abs(means)), scales, 1.0)
    else:
        safe = np.ones(p)
    zt = (z - means) / safe
    wsum = w.sum()
    y_mean = (w @ y) / wsum if fit_intercept else 0.0
    yt = y - y_mean

    zw = zt * w[:, None]
    col_a = 2.0 * np.einsum("ij,ij->j", zw, zt)  # 2 * sum w z^2 per column
    active_mask = col_a > 0.0

    theta = np.zeros(p)
    resid = yt.copy()
    objective = [float(w @ resid**2)]

    def _sweep(indices) -> float:
        nonlocal resid
        max_delta = 0.0
        for j in indices:
            cj = 2.0 * float(zw[:, j] @ resid) + col_a[j] * theta[j]
            new = _soft_threshold(cj, lam) / col_a[j]
            delta = new - theta[j]
            if delta != 0.0:
                resid -= zt[:, j] * delta
                theta[j] = new
                max_delta = max(max_delta, abs(delta))
        return max_delta

    all_idx = np.flatnonzero(active_mask)
    sweeps = 0
    converged = False
    while sweeps < max_sweeps:
        max_delta = _sweep(all_idx)
        sweeps += 1
        objective.append(float(w @ resid**2) + lam * float(np.sum(np.abs(theta))))
        if max_delta < tol:
            converged = True
            break
        # Iterate the current active set until it stabilizes, then re-check
        # all coordinates; this keeps full sweeps rare on sparse solutions.
        active = np.flatnonzero(theta)
        while sweeps < max_sweeps and active.size:
            max_delta = _sweep(active)
            sweeps += 1
            objective.append(float(w @ resid**2) + lam * float(np.sum(np.abs(theta))))
            if max_delta < tol:
                break
    if not converged and sweeps >= max_sweeps:
        warnings.warn(
            f"lasso_fit did not converge in {max_sweeps} sweeps "
            f"(last max coefficient change above {tol:g})", stacklevel=2,
        )

    coef = theta / safe
    intercept = float(y_mean - means @ coef) if fit_intercept else 0.0
    return LassoFit(
        coef=coef,
        intercept=intercept,
        lam=float(lam),
        col_means=means,
        col_scales=scales,
        converged=converged,
        n_sweeps=sweeps,
        objective_path=np.asarray(objective),
        weight_desc=weight_desc,
    )


def _sigmoid(t: np.ndarray) -> np.ndarray:
    out = np.empty_like(t, dtype=float)
    pos = t >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


@dataclass
class PropensityFit:
    """Fitted L1-penalized logistic regression with a trimming floor.

    Predicted scores are ``max(trim_floor / 2, logistic(z'delta))``; with
    ``two_sided`` set (treatment-effect use) they are additionally capped at
    ``1 - trim_floor / 2`` so both arms keep overlap.
    """

    coef: np.ndarray
    intercept: float
    lam: float
    trim_floor: float = 0.02
    two_sided: bool = False
    converged: bool = True
    n_iter: int = 0
    objective_path: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def linear_score(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        return z @ self.coef + self.intercept

    def predict(self, z: np.ndarray) -> np.ndarray:
        raw = _sigmoid(np.atleast_1d(self.linear_score(z)))
        lo = 0.5 * self.trim_floor
        out = np.maximum(lo, raw)
        if self.two_sided:
            out = np.minimum(out, 1.0 - lo)
        else:
            out = np.minimum(out, np.nextafter(1.0, 0.0))
        return out

    def trim_binding(self, z: np.ndarray) -> np.ndarray:
        """Boolean mask of rows where trimming changed the raw score."""
        raw = _sigmoid(np.atleast_1d(self.linear_score(z)))
        return raw != self.predict(z)


def logistic_lasso_fit(
    z: np.ndarray,
    d: np.ndarray,
    lam: float,
    *,
    fit_intercept: bool = True,
    standardize: bool = True,
    trim_floor: float = 0.02,
    two_sided: bool = False,
    tol: float = 1e-9,
    max_iter: int = 5_000,
) -> PropensityFit:
    """Proximal gradient (with backtracking line search) for the logistic lasso.

    Minimizes ``sum_i [log(1 + exp(eta_i)) - d_i eta_i] + lam * ||delta||_1``
    with ``eta = intercept + z'delta``; the intercept is unpenalized.  The
    objective never increases across accepted steps.  Convergence is declared
    when the relative objective decrease falls below ``tol``.
    """
    z = np.asarray(z, dtype=float)
    d = np.asarray(d, dtype=float).ravel()
    if z.ndim != 2 or z.shape[0] != d.shape[0]:
        raise DomainError(f"design/label shapes disagree: {z.shape} vs {d.shape}")
    if not np.all((d == 0.0) | (d == 1.0)):
        raise DomainError("labels must be binary 0/1")
    if d.min() == d.max():
        raise DegenerateFitError("labels contain a single class; logistic fit is degenerate")
    if lam < 0.0:
        raise DomainError("lam must be nonnegative")
    n, p = z.shape

    means, scales = _column_stats(z, np.ones(n), center=fit_intercept)
    if standardize:
        safe = np.where(scales > 1e-12 * (1.0 + np.abs(means)), scales, 1.0)
    else:
        safe = np.ones(p)
    zt = (z - means) / safe

    if fit_intercept:
        design = np.hstack([np.ones((n, 1)), zt])
        pen = np.concatenate([[0.0], np.full(p, lam)])
    else:
        design = zt
        pen = np.full(p, lam)

    def smooth(eta: np.ndarray) -> float:
        return float(np.sum(np.logaddexp(0.0, eta)) - d @ eta)

    def objective(beta: np.ndarray, eta: np.ndarray) -> float:
        return smooth(eta) + float(pen @ np.abs(beta))

    # Lipschitz estimate of the smooth part via power iteration on X'X / 4.
    v = np.ones(design.shape[1]) / math.sqrt(design.shape[1])
    for _ in range(20):
        v = design.T @ (design @ v)
        norm = np.linalg.norm(v)
        if norm == 0.0:
            break
        v /= norm
    lip = 0.25 * float(np.linalg.norm(design @ v) ** 2) if norm > 0.0 else 1.0
    step = 1.0 / max(lip, 1e-12)

    beta = np.zeros(design.shape[1])
    eta = design @ beta
    f_val = smooth(eta)
    obj = objective(beta, eta)
    path = [obj]
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        grad = design.T @ (_sigmoid(eta) - d)
        while True:
            cand = beta - step * grad
            cand = np.sign(cand) * np.maximum(np.abs(cand) - step * pen, 0.0)
            diff = cand - beta
            eta_cand = design @ cand
            f_cand = smooth(eta_cand)
            quad = f_val + float(grad @ diff) + float(diff @ diff) / (2.0 * step)
            if f_cand <= quad + 1e-12 * abs(quad):
                break
            step *= 0.5
            if step < 1e-18:
                break
        new_obj = f_cand + float(pen @ np.abs(cand))
        beta, eta, f_val = cand, eta_cand, f_cand
        path.append(new_obj)
        if abs(obj - new_obj) <= tol * (1.0 + abs(obj)):
            obj = new_obj
            converged = True
            break
        obj = new_obj
        step *= 1.1
    if not converged:
        warnings.warn(
            f"logistic_lasso_fit did not converge in {max_iter} iterations", stacklevel=2,
        )

    if fit_intercept:
        b0, slopes = beta[0], beta[1:]
    else:
        b0, slopes = 0.0, beta
    coef = slopes / safe
    intercept = float(b0 - means @ coef)
    return PropensityFit(
        coef=coef,
        intercept=intercept,
        lam=float(lam),
        trim_floor=float(trim_floor),
        two_sided=two_sided,
        converged=converged,
        n_iter=it,
        objective_path=np.asarray(path),
    )


def predict_propensity(fit: PropensityFit, z: np.ndarray) -> float | np.ndarray:
    """Trimmed propensity prediction; scalar in, scalar out."""
    z = np.asarray(z, dtype=float)
    if z.ndim == 1:
        return float(fit.predict(z[None, :])[0])
    return fit.predict(z)


@dataclass
class DensityScoreFit:
    """Gaussian-mixture density of a residual sample with per-point bandwidths.

    ``bandwidths`` are all equal to the pilot when the adaptive rescaling is
    off; with it on, each point's bandwidth is the pilot scaled by
    ``(pilot_density_i / geometric_mean) ** (-1/2)``.
    """

    residuals: np.ndarray
    bandwidths: np.ndarray
    pilot_bandwidth: float
    regression: LassoFit | None = None

    def density(self, u) -> np.ndarray:
        return _kde_eval(np.atleast_1d(np.asarray(u, dtype=float)),
                         self.residuals, self.bandwidths)[0]

    def log_gradient(self, u) -> np.ndarray:
        uv = np.atleast_1d(np.asarray(u, dtype=float))
        dens, deriv = _kde_eval(uv, self.residuals, self.bandwidths)
        if np.any(dens < 1e-300):
            bad = uv[dens < 1e-300]
            raise TailExtrapolationError(
                f"density underflow at {bad[:3]}...: point(s) far outside the "
                "residual support"
            )
        return deriv / dens


def _kde_eval(
    u: np.ndarray, centers: np.ndarray, bandwidths: np.ndarray,
    chunk: int = 512,
) -> tuple[np.ndarray, np.ndarray]:
    """Mixture density and its derivative at points ``u``."""
    n = centers.shape[0]
    inv_h = 1.0 / bandwidths
    dens = np.empty(u.shape[0])
    deriv = np.empty(u.shape[0])
    for start in range(0, u.shape[0], chunk):
        block = u[start : start + chunk, None]
        t = (block - centers[None, :]) * inv_h[None, :]
        kern = np.exp(-0.5 * t * t) * (inv_h[None, :] / _SQRT_2PI)
        dens[start : start + chunk] = kern.mean(axis=1)
        deriv[start : start + chunk] = (-t * inv_h[None, :] * kern).mean(axis=1)
    return dens, deriv


def _silverman_bandwidth(u: np.ndarray) -> float:
    sd = float(np.std(u))
    q75, q25 = np.percentile(u, [75.0, 25.0])
    iqr = float(q75 - q25)
    spread = min(sd, iqr / 1.34) if iqr > 0.0 else sd
    return 0.9 * spread * u.shape[0] ** (-0.2)


def _pilot_density_at_points(u: np.ndarray, h: float) -> np.ndarray:
    """Fixed-bandwidth density of the sample at its own points.

    Direct O(n^2) evaluation for small samples; above that, linear binning on
    a fine grid plus truncated Gaussian convolution (relative error below
    ~1e-6 for any realistic bandwidth-to-range ratio), interpolated back to
    the points.
    """
    n = u.shape[0]
    if n <= 4000:
        return _kde_eval(u, u, np.full(n, h))[0]
    lo = float(u.min()) - 4.0 * h
    hi = float(u.max()) + 4.0 * h
    m = 1 << 14
    dx = (hi - lo) / (m - 1)
    if dx > h / 4.0:  # bandwidth too narrow for the grid: stay exact
        return _kde_eval(u, u, np.full(n, h))[0]
    grid = lo + dx * np.arange(m)
    pos = (u - lo) / dx
    i0 = np.floor(pos).astype(np.int64)
    frac = pos - i0
    counts = np.bincount(i0, weights=1.0 - frac, minlength=m)
    counts += np.bincount(np.minimum(i0 + 1, m - 1), weights=frac, minlength=m)
    width = int(np.ceil(6.0 * h / dx))
    kx = dx * np.arange(-width, width + 1)
    kern = np.exp(-0.5 * (kx / h) ** 2) / (h * _SQRT_2PI)
    dens_grid = np.convolve(counts, kern, mode="same") / n
    return np.interp(u, grid, dens_grid)


def fit_density_score(
    residuals: np.ndarray,
    adaptive: bool = True,
    *,
    bandwidth: float | None = None,
    regression: LassoFit | None = None,
) -> DensityScoreFit:
    """Kernel density of a residual sample, exposing the score function.

    The pilot bandwidth follows Silverman's rule unless ``bandwidth`` forces
    a value (which also waives the minimum-sample requirement).  With
    ``adaptive`` on, per-point bandwidths follow the square-root law around
    the pilot: points in low pilot density get wider kernels.
    """
    u = np.asarray(residuals, dtype=float).ravel()
    if not np.all(np.isfinite(u)):
        raise DomainError("residuals contain non-finite values")
    if bandwidth is None:
        if u.shape[0] < 10:
            raise DomainError("need at least 10 residuals for an automatic bandwidth")
        if float(np.std(u)) <= 0.0:
            raise DegenerateFitError("residuals have zero variance")
        pilot = _silverman_bandwidth(u)
    else:
        pilot = float(bandwidth)
        if pilot <= 0.0:
            raise DomainError("bandwidth must be positive")
    if adaptive and u.shape[0] > 1:
        pilot_dens = _pilot_density_at_points(u, pilot)
        log_geo = float(np.mean(np.log(pilot_dens)))
        factors = np.sqrt(np.exp(log_geo) / pilot_dens)
        bandwidths = pilot * factors
    else:
        bandwidths = np.full(u.shape[0], pilot)
    return DensityScoreFit(
        residuals=u, bandwidths=bandwidths, pilot_bandwidth=pilot, regression=regression,
    )


def eval_log_density_derivative(fit: DensityScoreFit, u) -> float | np.ndarray:
    """Log-density derivative (score) of the fitted kernel mixture at ``u``."""
    out = fit.log_gradient(u)
    if np.isscalar(u) or np.asarray(u).ndim == 0:
        return float(out[0])
    return out
