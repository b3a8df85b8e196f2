"""Second stage: series least squares of the estimated signal on the
technical regressors, sandwich covariance, pointwise Gaussian intervals, and
sup-t uniform confidence bands via the exponential-weight bootstrap.

Scaling conventions, side by side: the pointwise halfwidth is
``z_{1-a/2} * sqrt(p(x)' C p(x) / N)`` where ``C`` is the sandwich
covariance; the bootstrap sup statistic is computed on the *unscaled*
difference between draws and the fit, ``sup_x |p(x)'(b^w - b)| / e(x)`` with
``e(x) = sqrt(p(x)' C p(x))``, so the uniform band ``g(x) +- e(x) t*``
carries no extra sqrt(N) — the two conventions agree because t* itself is
of order 1/sqrt(N).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .basis import BasisSpec, DesignMatrix, design_matrix, sup_basis_norm
from .errors import DomainError, DrawRejectionError, IdentificationError, SingularMatrixError
from .numerics import RngStream, normal_quantile, solve_spd, symmetrize

__all__ = [
    "LREFit",
    "fit_lre",
    "estimate_covariance",
    "pointwise_interval",
    "bootstrap_draw",
    "uniform_band",
    "BandResult",
    "DiagnosticsReport",
    "diagnostics",
]


@dataclass(frozen=True)
class LREFit:
    """Fitted second stage: coefficients, Gram and sandwich matrices.

    ``gram`` is the sample regressor covariance ``E_N p p'`` (positive
    definite by the fit-time diagnostic) and ``cov`` the plug-in sandwich
    covariance of ``sqrt(N) * coef`` (positive semidefinite).
    """

    coef: np.ndarray
    gram: np.ndarray
    cov: np.ndarray
    n_obs: int
    spec: BasisSpec

    def predict(self, x) -> np.ndarray:
        dm = design_matrix(np.atleast_1d(np.asarray(x, dtype=float)), self.spec,
                           check_rank=False)
        return dm.values @ self.coef

    @classmethod
    def from_design(cls, design: DesignMatrix, yhat: np.ndarray) -> "LREFit":
        coef = fit_lre(design, yhat)
        cov = estimate_covariance(design, yhat, coef)
        p = design.values
        gram = symmetrize(p.T @ p / p.shape[0])
        return cls(coef=coef, gram=gram, cov=cov, n_obs=p.shape[0], spec=design.spec)


def _gram(p: np.ndarray) -> np.ndarray:
    return symmetrize(p.T @ p / p.shape[0])


def fit_lre(design: DesignMatrix, yhat: np.ndarray) -> np.ndarray:
    """Exact normal-equation solution ``(E_N p p')^{-1} E_N p y``.

    Raises
    ------
    IdentificationError
        When the sample Gram matrix fails the minimum-eigenvalue check —
        the basis columns are too collinear to identify the projection.
    """
    p = design.values
    y = np.asarray(yhat, dtype=float).ravel()
    if y.shape[0] != p.shape[0]:
        raise DomainError(f"signal length {y.shape[0]} does not match design rows {p.shape[0]}")
    gram = _gram(p)
    moment = p.T @ y / p.shape[0]
    try:
        return solve_spd(gram, moment)
    except SingularMatrixError as exc:
        raise IdentificationError(
            f"regressor covariance is numerically singular "
            f"(min eigenvalue {exc.min_eigenvalue:.3e}): basis columns are too "
            "collinear in this sample to identify the projection",
            min_eigenvalue=exc.min_eigenvalue,
        ) from exc


def estimate_covariance(design: DesignMatrix, yhat: np.ndarray, coef: np.ndarray) -> np.ndarray:
    """Sandwich covariance ``G^{-1} [E_N p p' r^2] G^{-1}``, r the fit residual.

    The result is symmetrized after computation; asymmetry beyond 1e-12
    (relative) is treated as a bug and asserted against.
    """
    p = design.values
    y = np.asarray(yhat, dtype=float).ravel()
    resid = y - p @ np.asarray(coef, dtype=float)
    gram = _gram(p)
    meat = (p * resid[:, None] ** 2).T @ p / p.shape[0]
    half = solve_spd(gram, meat)
    cov = solve_spd(gram, half.T).T
    scale = max(1.0, float(np.max(np.abs(cov))))
    asym = float(np.max(np.abs(cov - cov.T)))
    assert asym <= 1e-12 * scale, f"sandwich asymmetry {asym:.3e} exceeds tolerance"
    return 0.5 * (cov + cov.T)


def pointwise_interval(fit: LREFit, x0, alpha: float = 0.05) -> tuple[float, float, float]:
    """Gaussian interval for the projection value at a point.

    Returns ``(lo, center, hi)`` with halfwidth
    ``z_{1-alpha/2} * sqrt(p(x0)' C p(x0) / N)``.
    """
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must be in (0, 1), got {alpha}")
    from .basis import eval_basis

    p0 = eval_basis(x0, fit.spec)
    center = float(p0 @ fit.coef)
    variance = float(p0 @ fit.cov @ p0)
    half = normal_quantile(1.0 - alpha / 2.0) * np.sqrt(max(variance, 0.0) / fit.n_obs)
    return center - half, center, center + half


def bootstrap_draw(design: DesignMatrix, yhat: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Exact weighted least squares ``(E_N h p p')^{-1} E_N h p y``.

    Raises
    ------
    DrawRejectionError
        If the weighted Gram matrix is singular; the caller resamples.
    """
    p = design.values
    y = np.asarray(yhat, dtype=float).ravel()
    h = np.asarray(weights, dtype=float).ravel()
    if h.shape[0] != p.shape[0]:
        raise DomainError("weights length does not match design rows")
    if np.any(h <= 0.0):
        raise DomainError("bootstrap weights must be strictly positive")
    gram_w = symmetrize((p * h[:, None]).T @ p / p.shape[0])
    moment_w = p.T @ (h * y) / p.shape[0]
    try:
        return solve_spd(gram_w, moment_w)
    except SingularMatrixError as exc:
        raise DrawRejectionError(f"weighted Gram matrix is singular: {exc}") from exc


@dataclass
class BandResult:
    """Evaluation grid with the fitted curve, pointwise and uniform bands.

    ``crit_value`` is the bootstrap critical value (the ceil((1-alpha)B)
    order statistic of the sup statistic); ``n_retries`` counts bootstrap
    draws that had to be resampled after a singular weighted Gram.
    """

    grid: np.ndarray
    estimate: np.ndarray
    stderr: np.ndarray
    point_lo: np.ndarray
    point_hi: np.ndarray
    uniform_lo: np.ndarray
    uniform_hi: np.ndarray
    crit_value: float
    n_draws: int
    alpha: float
    n_obs: int
    n_retries: int = 0

    _CSV_COLUMNS = ("x", "g_hat", "e_hat", "pw_lo", "pw_hi", "unif_lo", "unif_hi")

    def rows(self):
        grid = np.atleast_2d(self.grid.T).T
        for i in range(grid.shape[0]):
            xval = grid[i]
            yield (
                [float(v) for v in xval] if xval.size > 1 else float(xval[0]),
                float(self.estimate[i]),
                float(self.stderr[i]),
                float(self.point_lo[i]),
                float(self.point_hi[i]),
                float(self.uniform_lo[i]),
                float(self.uniform_hi[i]),
            )

    def to_csv(self, path) -> None:
        grid = np.atleast_2d(self.grid.T).T
        header = list(self._CSV_COLUMNS)
        if grid.shape[1] > 1:
            header = [f"x{j + 1}" for j in range(grid.shape[1])] + header[1:]
        with open(path, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(header)
            for row in self.rows():
                x, rest = row[0], row[1:]
                xs = x if isinstance(x, list) else [x]
                writer.writerow([repr(v) for v in (*xs, *rest)])

    def to_dict(self) -> dict:
        return {
            "t_star": self.crit_value,
            "B": self.n_draws,
            "alpha": self.alpha,
            "n_obs": self.n_obs,
            "n_retries": self.n_retries,
            "grid": self.grid.tolist(),
            "g_hat": self.estimate.tolist(),
            "e_hat": self.stderr.tolist(),
            "pw_lo": self.point_lo.tolist(),
            "pw_hi": self.point_hi.tolist(),
            "unif_lo": self.uniform_lo.tolist(),
            "unif_hi": self.uniform_hi.tolist(),
        }

    def to_json(self, path) -> None:
        with open(path, "w") as handle:
            json.dump(self.to_dict(), handle, sort_keys=True, indent=2)
            handle.write("\n")


def uniform_band(
    fit: LREFit,
    design: DesignMatrix,
    yhat: np.ndarray,
    grid,
    n_draws: int = 200,
    alpha: float = 0.05,
    rng: RngStream | None = None,
    *,
    weight_sampler=None,
    max_retries: int = 10,
) -> BandResult:
    """Sup-t uniform confidence band from the exponential-weight bootstrap.

    Each draw re-solves least squares under i.i.d. standard-exponential
    observation weights (the signal stays fixed; no first-stage refit), takes
    the studentized sup over the grid, and the critical value is the
    ceil((1-alpha)B) order statistic of those sups.  ``weight_sampler`` is a
    test hook replacing the exponential sampler.
    """
    if n_draws < 50:
        raise DomainError(f"need at least 50 bootstrap draws, got {n_draws}")
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must be in (0, 1), got {alpha}")
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise DomainError("band grid is empty")
    grid2d = grid[:, None] if grid.ndim == 1 else grid
    if rng is None and weight_sampler is None:
        raise DomainError("uniform_band needs an RngStream (or a weight sampler)")

    pg = design_matrix(grid2d, fit.spec, check_rank=False).values
    estimate = pg @ fit.coef
    variance = np.einsum("ij,jk,ik->i", pg, fit.cov, pg)
    stderr = np.sqrt(np.maximum(variance, 0.0))
    if np.any(stderr <= 0.0):
        bad = int(np.flatnonzero(stderr <= 0.0)[0])
        raise DomainError(
            f"degenerate scale: estimated standard error is zero at grid point {bad}"
        )

    gen = rng.generator() if rng is not None else None
    n = design.n_obs
    if weight_sampler is None:
        def weight_sampler(size: int) -> np.ndarray:  # noqa: F811 - default hook
            return gen.standard_exponential(size)

    sups = np.empty(n_draws)
    retries = 0
    for b in range(n_draws):
        attempt = 0
        while True:
            try:
                coef_b = bootstrap_draw(design, yhat, weight_sampler(n))
                break
            except DrawRejectionError:
                attempt += 1
                retries += 1
                if attempt > max_retries:
                    raise
        sups[b] = float(np.max(np.abs(pg @ (coef_b - fit.coef)) / stderr))
    order = int(np.ceil((1.0 - alpha) * n_draws))
    crit = float(np.sort(sups)[order - 1])

    z = normal_quantile(1.0 - alpha / 2.0)
    pw_half = z * stderr / np.sqrt(fit.n_obs)
    un_half = crit * stderr
    return BandResult(
        grid=grid,
        estimate=estimate,
        stderr=stderr,
        point_lo=estimate - pw_half,
        point_hi=estimate + pw_half,
        uniform_lo=estimate - un_half,
        uniform_hi=estimate + un_half,
        crit_value=crit,
        n_draws=n_draws,
        alpha=alpha,
        n_obs=fit.n_obs,
        n_retries=retries,
    )


@dataclass(frozen=True)
class DiagnosticsReport:
    """Identification and first-stage health summary for a fitted model."""

    min_eigenvalue: float
    max_eigenvalue: float
    condition_number: float
    n_obs: int
    n_columns: int
    basis_sup_norm: float | None = None
    trim_binding_fraction: float | None = None

    def to_dict(self) -> dict:
        return {
            "min_eigenvalue": self.min_eigenvalue,
            "max_eigenvalue": self.max_eigenvalue,
            "condition_number": self.condition_number,
            "n_obs": self.n_obs,
            "n_columns": self.n_columns,
            "basis_sup_norm": self.basis_sup_norm,
            "trim_binding_fraction": self.trim_binding_fraction,
        }


def diagnostics(
    fit: LREFit,
    grid=None,
    trim_binding_fraction: float | None = None,
) -> DiagnosticsReport:
    """Eigenvalue spread of the sample Gram matrix plus optional extras.

    A tiny minimum eigenvalue flags regressors too collinear for reliable
    inference; the optional grid adds the basis sup-norm diagnostic.
    """
    eigvals = np.linalg.eigvalsh(symmetrize(fit.gram))
    w_min = float(eigvals[0])
    w_max = float(eigvals[-1])
    cond = w_max / w_min if w_min > 0.0 else float("inf")
    xi = sup_basis_norm(fit.spec, grid) if grid is not None else None
    return DiagnosticsReport(
        min_eigenvalue=w_min,
        max_eigenvalue=w_max,
        condition_number=cond,
        n_obs=fit.n_obs,
        n_columns=fit.gram.shape[0],
        basis_sup_norm=xi,
        trim_binding_fraction=trim_binding_fraction,
    )
