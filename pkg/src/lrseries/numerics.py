"""Deterministic numeric kernels: seeded RNG streams, Gaussian quantiles,
symmetric positive-definite solves, eigenvalue diagnostics, and AR(1)
(Toeplitz-covariance) Gaussian sampling.

All functions are pure; :class:`RngStream` is an immutable handle whose
generators are owned by one caller at a time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, SingularMatrixError

__all__ = [
    "RngStream",
    "normal_quantile",
    "solve_spd",
    "min_eigenvalue",
    "toeplitz_correlation",
    "toeplitz_gaussian",
    "symmetrize",
]

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

# Relative eigenvalue floor below which an SPD solve is refused instead of
# silently regularized.
SPD_EIGENVALUE_FLOOR = 1e-10


@dataclass(frozen=True)
class RngStream:
    """Reproducible random stream keyed by (seed, path).

    Identical (seed, path) pairs yield bit-identical draw sequences; distinct
    paths yield statistically independent streams (numpy ``SeedSequence``
    spawning).  ``child(k)`` derives per-replication substreams.  Normal
    variates come from numpy's PCG64 ziggurat sampler.
    """

    seed: int
    path: tuple[int, ...] = ()

    def child(self, k: int) -> "RngStream":
        return RngStream(self.seed, self.path + (int(k),))

    def generator(self) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=self.path))


# Rational approximation of the standard normal quantile (Acklam's algorithm),
# refined by one Newton step against Phi evaluated through erfc.
_ACKLAM_A = (
    -3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
    1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00,
)
_ACKLAM_B = (
    -5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
    6.680131188771972e01, -1.328068155288572e01,
)
_ACKLAM_C = (
    -7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
    -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00,
)
_ACKLAM_D = (
    7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
    3.754408661907416e00,
)
_ACKLAM_SPLIT = 0.02425


def _acklam_lower(u: float) -> float:
    # u in (0, 0.5]; returns a non-positive quantile approximation.
    a, b, c, d = _ACKLAM_A, _ACKLAM_B, _ACKLAM_C, _ACKLAM_D
    if u < _ACKLAM_SPLIT:
        q = math.sqrt(-2.0 * math.log(u))
        num = ((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]
        den = (((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0
        return num / den
    q = u - 0.5
    r = q * q
    num = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q
    den = ((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0
    return num / den


def _quantile_lower(u: float) -> float:
    x = _acklam_lower(u)
    # One Newton step: Phi(x) via erfc keeps full relative accuracy for x <= 0.
    phi_x = 0.5 * math.erfc(-x / _SQRT2)
    pdf = math.exp(-0.5 * x * x) * _INV_SQRT_2PI
    if pdf > 0.0:
        x -= (phi_x - u) / pdf
    return x


def normal_quantile(u: float) -> float:
    """Standard normal quantile (inverse CDF) with absolute error below 1e-8.

    Parameters
    ----------
    u : float
        Probability, strictly inside (0, 1).

    Raises
    ------
    DomainError
        If ``u`` is outside the open unit interval.
    """
    u = float(u)
    if not 0.0 < u < 1.0 or math.isnan(u):
        raise DomainError(f"normal_quantile requires u in (0, 1), got {u!r}")
    if u == 0.5:
        return 0.0
    if u > 0.5:
        # 1 - u is exact for u in [0.5, 1), so symmetry costs no precision.
        return -_quantile_lower(1.0 - u)
    return _quantile_lower(u)


def symmetrize(a: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    """Return (A + A') / 2 after checking asymmetry is below ``tol`` (relative)."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DomainError(f"expected a square matrix, got shape {a.shape}")
    scale = max(1.0, float(np.max(np.abs(a))))
    gap = float(np.max(np.abs(a - a.T)))
    if gap > tol * scale:
        raise DomainError(f"matrix is not symmetric: max asymmetry {gap:.3e}")
    return 0.5 * (a + a.T)


def min_eigenvalue(a: np.ndarray) -> float:
    """Smallest eigenvalue of a symmetric matrix.

    Raises
    ------
    DomainError
        If entries are non-finite or the matrix is not symmetric.
    """
    a = np.asarray(a, dtype=float)
    if not np.all(np.isfinite(a)):
        raise DomainError("min_eigenvalue: matrix has non-finite entries")
    a = symmetrize(a)
    return float(np.linalg.eigvalsh(a)[0])


def solve_spd(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve ``A x = B`` for symmetric positive definite ``A`` via Cholesky.

    Refuses near-singular systems: if the smallest eigenvalue of ``A`` falls
    below ``SPD_EIGENVALUE_FLOOR * max(diag(A))`` the solve raises instead of
    regularizing, so collinearity surfaces as an error.

    Raises
    ------
    SingularMatrixError
        Naming the estimated minimum eigenvalue when ``A`` is not positive
        definite at working tolerance.
    """
    a = np.asarray(a, dtype=float)
    b_arr = np.asarray(b, dtype=float)
    if not np.all(np.isfinite(a)):
        raise DomainError("solve_spd: matrix has non-finite entries")
    a = symmetrize(a)
    max_diag = float(np.max(np.diag(a))) if a.size else 0.0
    w_min = float(np.linalg.eigvalsh(a)[0]) if a.size else 0.0
    if max_diag <= 0.0 or w_min < SPD_EIGENVALUE_FLOOR * max_diag:
        raise SingularMatrixError(
            f"matrix is not positive definite at tolerance: min eigenvalue "
            f"{w_min:.6e} vs max diagonal {max_diag:.6e}",
            min_eigenvalue=w_min,
        )
    try:
        chol = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - guarded above
        raise SingularMatrixError(
            f"Cholesky factorization failed: {exc}; min eigenvalue {w_min:.6e}",
            min_eigenvalue=w_min,
        ) from exc
    y = np.linalg.solve(chol, b_arr)
    return np.linalg.solve(chol.T, y)


def toeplitz_correlation(dim: int, rho: float) -> np.ndarray:
    """Correlation matrix with entries ``rho ** |j - k|``."""
    if not abs(rho) < 1.0:
        raise DomainError(f"toeplitz_correlation requires |rho| < 1, got {rho}")
    idx = np.arange(int(dim))
    return rho ** np.abs(idx[:, None] - idx[None, :])


def toeplitz_gaussian(n: int, dim: int, rho: float, rng: RngStream) -> np.ndarray:
    """Draw ``n`` i.i.d. rows from N(0, T(rho)) with T(rho)[j,k] = rho^|j-k|.

    Uses the AR(1) recursion ``Z_j = rho * Z_{j-1} + sqrt(1 - rho^2) * eps_j``,
    which is exact for this covariance and O(n * dim).  Output is
    bit-reproducible for a fixed (seed, path).
    """
    if not abs(rho) < 1.0:
        raise DomainError(f"toeplitz_gaussian requires |rho| < 1, got {rho}")
    n = int(n)
    dim = int(dim)
    if n <= 0 or dim <= 0:
        raise DomainError("toeplitz_gaussian requires positive n and dim")
    eps = rng.generator().standard_normal((n, dim))
    if rho == 0.0:
        return eps
    out = np.empty_like(eps)
    out[:, 0] = eps[:, 0]
    scale = math.sqrt(1.0 - rho * rho)
    for j in range(1, dim):
        out[:, j] = rho * out[:, j - 1] + scale * eps[:, j]
    return out
