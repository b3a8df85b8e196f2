"""Technical-regressor construction: polynomial and B-spline bases, the
evaluated design matrix, and the sup-norm diagnostic of the basis vector.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DomainError

__all__ = [
    "BasisSpec",
    "bspline_spec_from_data",
    "eval_basis",
    "design_matrix",
    "DesignMatrix",
    "sup_basis_norm",
]


@dataclass(frozen=True)
class BasisSpec:
    """Declarative basis definition.

    Parameters
    ----------
    kind : {"polynomial", "bspline"}
    degree : int
        Polynomial degree, or B-spline order (order 2 = piecewise linear).
    ndim : int
        Dimension of the covariate of interest.  For ``ndim > 1`` the
        polynomial basis expands each coordinate separately (main effects,
        no interactions); B-splines require ``ndim == 1``.
    include_intercept : bool
        Prepend a constant regressor (polynomial kind only; B-spline bases
        already sum to one, so an extra constant would be collinear and the
        flag is ignored for them).
    knots : tuple of float
        Strictly increasing interior knots (B-spline kind only).
    boundary : (float, float)
        Closed evaluation interval for B-splines.  Points outside are clamped
        with a warning.
    """

    kind: str
    degree: int
    ndim: int = 1
    include_intercept: bool = True
    knots: tuple[float, ...] = field(default=())
    boundary: tuple[float, float] | None = None

    def __post_init__(self):
        if self.kind not in ("polynomial", "bspline"):
            raise ConfigError(f"unknown basis kind {self.kind!r}")
        if self.degree < 1:
            raise ConfigError("degree/order must be >= 1")
        if self.ndim < 1:
            raise ConfigError("ndim must be >= 1")
        if self.kind == "bspline":
            if self.ndim != 1:
                raise ConfigError("bspline basis supports ndim == 1 only")
            if self.boundary is None:
                raise ConfigError("bspline basis requires a boundary interval")
            lo, hi = self.boundary
            if not lo < hi:
                raise ConfigError("boundary must satisfy lo < hi")
            ks = np.asarray(self.knots, dtype=float)
            if ks.size and (np.any(np.diff(ks) <= 0.0) or ks[0] <= lo or ks[-1] >= hi):
                raise ConfigError(
                    "interior knots must be strictly increasing and inside the boundary"
                )

    @property
    def n_columns(self) -> int:
        if self.kind == "polynomial":
            return int(self.include_intercept) + self.ndim * self.degree
        return len(self.knots) + self.degree

    def to_dict(self) -> dict:
        out = {
            "kind": self.kind,
            "degree": self.degree,
            "ndim": self.ndim,
            "include_intercept": self.include_intercept,
        }
        if self.kind == "bspline":
            out["knots"] = list(self.knots)
            out["boundary"] = list(self.boundary)
        return out

    @classmethod
    def from_dict(cls, spec: dict) -> "BasisSpec":
        known = {"kind", "degree", "ndim", "include_intercept", "knots", "boundary"}
        unknown = set(spec) - known
        if unknown:
            raise ConfigError(f"unknown basis keys: {sorted(unknown)}")
        kwargs = dict(spec)
        if "knots" in kwargs:
            kwargs["knots"] = tuple(float(k) for k in kwargs["knots"])
        if "boundary" in kwargs and kwargs["boundary"] is not None:
            lo, hi = kwargs["boundary"]
            kwargs["boundary"] = (float(lo), float(hi))
        return cls(**kwargs)


def bspline_spec_from_data(x: np.ndarray, order: int = 2, n_knots: int = 1) -> BasisSpec:
    """B-spline spec with interior knots at empirical quantiles of ``x``.

    One knot lands at the median; ``k`` knots sit at quantiles i/(k+1).
    The boundary is the data range.
    """
    x = np.asarray(x, dtype=float).ravel()
    if x.size < 2:
        raise ConfigError("need at least two data points to place knots")
    probs = np.arange(1, n_knots + 1) / (n_knots + 1)
    knots = tuple(float(q) for q in np.quantile(x, probs))
    lo, hi = float(np.min(x)), float(np.max(x))
    if any(not lo < k < hi for k in knots):
        raise ConfigError("quantile knots collide with the data range boundary")
    return BasisSpec(
        kind="bspline", degree=order, ndim=1, include_intercept=False,
        knots=knots, boundary=(lo, hi),
    )


def _full_knot_vector(spec: BasisSpec) -> np.ndarray:
    lo, hi = spec.boundary
    order = spec.degree
    return np.concatenate([
        np.full(order, lo), np.asarray(spec.knots, dtype=float), np.full(order, hi),
    ])


def _bspline_row(u: float, spec: BasisSpec, tknots: np.ndarray) -> tuple[np.ndarray, bool]:
    """All B-spline basis values at ``u`` by the Cox-de Boor recursion.

    Returns the length-``n_columns`` vector and whether ``u`` was clamped to
    the boundary interval.
    """
    order = spec.degree
    deg = order - 1
    nb = spec.n_columns
    lo, hi = spec.boundary
    clamped = False
    if u < lo:
        u, clamped = lo, True
    elif u > hi:
        u, clamped = hi, True
    # Span index such that tknots[span] <= u < tknots[span + 1]; the right
    # boundary point belongs to the last span.
    span = int(np.searchsorted(tknots, u, side="right")) - 1
    span = min(max(span, deg), nb - 1)
    # Triangular recursion over the order local nonzero functions.
    vals = np.zeros(order)
    vals[0] = 1.0
    left = np.zeros(order)
    right = np.zeros(order)
    for j in range(1, order):
        left[j] = u - tknots[span + 1 - j]
        right[j] = tknots[span + j] - u
        saved = 0.0
        for r in range(j):
            temp = vals[r] / (right[r + 1] + left[j - r])
            vals[r] = saved + right[r + 1] * temp
            saved = left[j - r] * temp
        vals[j] = saved
    row = np.zeros(nb)
    row[span - deg : span + 1] = vals
    return row, clamped


def _poly_rows(x: np.ndarray, spec: BasisSpec) -> np.ndarray:
    """Vectorized polynomial expansion of an (n, ndim) array."""
    n = x.shape[0]
    cols = []
    if spec.include_intercept:
        cols.append(np.ones((n, 1)))
    power = x.copy()
    for _ in range(spec.degree):
        cols.append(power)
        power = power * x
    return np.hstack(cols)


def eval_basis(x, spec: BasisSpec) -> np.ndarray:
    """Evaluate the regressor vector p(x) at a single covariate value.

    ``x`` is a scalar for ``ndim == 1`` or a length-``ndim`` vector.  B-spline
    evaluations outside the boundary are clamped to the boundary value and a
    warning is emitted.
    """
    xv = np.atleast_1d(np.asarray(x, dtype=float))
    if xv.shape != (spec.ndim,):
        raise DomainError(f"covariate has shape {xv.shape}, spec expects ({spec.ndim},)")
    if spec.kind == "polynomial":
        return _poly_rows(xv[None, :], spec)[0]
    tknots = _full_knot_vector(spec)
    row, clamped = _bspline_row(float(xv[0]), spec, tknots)
    if clamped:
        warnings.warn(
            f"bspline evaluation point {float(xv[0]):g} outside boundary "
            f"{spec.boundary}; clamped", stacklevel=2,
        )
    return row


@dataclass(frozen=True)
class DesignMatrix:
    """Evaluated N x d regressor matrix together with its basis spec."""

    values: np.ndarray
    spec: BasisSpec

    @property
    def n_obs(self) -> int:
        return self.values.shape[0]

    @property
    def n_columns(self) -> int:
        return self.values.shape[1]


def design_matrix(x: np.ndarray, spec: BasisSpec, *, check_rank: bool = True) -> DesignMatrix:
    """Row-wise basis evaluation of an (N, ndim) covariate matrix.

    ``check_rank=False`` skips the N >= d requirement (for evaluation grids
    that are not estimation designs).

    Raises
    ------
    DomainError
        If N < d (the normal equations would be rank deficient by count).
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[1] != spec.ndim:
        raise DomainError(f"covariates have {x.shape[1]} columns, spec expects {spec.ndim}")
    n = x.shape[0]
    d = spec.n_columns
    if check_rank and n < d:
        raise DomainError(f"need at least as many rows as basis columns: N={n} < d={d}")
    if spec.kind == "polynomial":
        values = _poly_rows(x, spec)
    else:
        tknots = _full_knot_vector(spec)
        values = np.empty((n, d))
        n_clamped = 0
        for i in range(n):
            values[i], clamped = _bspline_row(float(x[i, 0]), spec, tknots)
            n_clamped += clamped
        if n_clamped:
            warnings.warn(
                f"{n_clamped} evaluation point(s) outside bspline boundary "
                f"{spec.boundary}; clamped", stacklevel=2,
            )
    if not np.all(np.isfinite(values)):
        raise DomainError("design matrix has non-finite entries")
    return DesignMatrix(values=values, spec=spec)


def sup_basis_norm(spec: BasisSpec, grid) -> float:
    """Max Euclidean norm of p(x) over a grid (a lower bound for the true sup).

    This is the growth diagnostic for the basis: large values at a given
    dimension warn that sup-norm-sensitive approximations degrade.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise DomainError("sup_basis_norm requires a nonempty grid")
    if grid.ndim == 1:
        grid = grid[:, None]
    best = 0.0
    for row in grid:
        p = eval_basis(row if spec.ndim > 1 else row[0], spec)
        best = max(best, float(np.linalg.norm(p)))
    return best
