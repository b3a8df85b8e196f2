"""Per-observation signal construction for each estimand.

A signal is an observable transformation of the data and first-stage
nuisances whose conditional expectation given the covariates of interest
equals the target function.  Robust variants make that expectation
insensitive, to first order, to nuisance estimation error; the inverse
probability weighted (IPW) variants are the non-orthogonal baselines.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import DomainError

__all__ = [
    "SignalKind",
    "NuisanceValues",
    "signal_missing",
    "signal_cate",
    "signal_cate_missing",
    "signal_capd",
    "signal_ipw_missing",
    "signal_ipw_cate",
    "build_signals",
]


class SignalKind(str, Enum):
    """Estimand / signal variant selector."""

    ROBUST_MISSING = "robust_missing"
    ROBUST_CATE = "robust_cate"
    ROBUST_CATE_MISSING = "robust_cate_missing"
    ROBUST_CAPD = "robust_capd"
    IPW_MISSING = "ipw_missing"
    IPW_CATE = "ipw_cate"

    @property
    def is_robust(self) -> bool:
        return self.value.startswith("robust")

    @property
    def needs_treatment(self) -> bool:
        return self is SignalKind.ROBUST_CATE_MISSING

    @property
    def needs_derivative_variable(self) -> bool:
        return self is SignalKind.ROBUST_CAPD


@dataclass
class NuisanceValues:
    """Per-row nuisance evaluations feeding :func:`build_signals`.

    Only the slots a given :class:`SignalKind` reads need to be present.
    """

    mu: np.ndarray | None = None      # outcome regression (missing-outcome kinds)
    mu1: np.ndarray | None = None     # treated-arm regression
    mu0: np.ndarray | None = None     # control-arm regression
    s: np.ndarray | None = None       # presence / propensity score
    h: np.ndarray | None = None      # treatment propensity (experiment with missingness)
    dlogf: np.ndarray | None = None   # log-density derivative of the regressor of interest
    dmu: np.ndarray | None = None     # partial derivative of the outcome regression


def signal_missing(y_o: float, d: float, mu: float, s: float) -> float:
    """Robust missing-outcome signal ``mu + d * (y_o - mu) / s``; requires s in (0, 1]."""
    if not 0.0 < s <= 1.0:
        raise DomainError(f"presence score must be in (0, 1], got {s}")
    return mu + d * (y_o - mu) / s


def signal_cate(y_o: float, d: float, mu1: float, mu0: float, s: float) -> float:
    """Robust treatment-effect signal,
    ``mu1 - mu0 + d (y_o - mu1) / s - (1 - d)(y_o - mu0) / (1 - s)``;
    requires s strictly inside (0, 1)."""
    if not 0.0 < s < 1.0:
        raise DomainError(f"propensity must be in (0, 1), got {s}")
    return mu1 - mu0 + d * (y_o - mu1) / s - (1.0 - d) * (y_o - mu0) / (1.0 - s)


def signal_cate_missing(
    y_o: float, d: float, t: float, mu1: float, mu0: float, s: float, h: float,
) -> float:
    """Robust treatment-effect signal under partially missing outcomes:
    ``mu1 - mu0 + d t (y_o - mu1) / (s h) - d (1 - t)(y_o - mu0) / (s (1 - h))``.

    ``h`` in {0, 1} is rejected exactly: overlap failures upstream should
    surface, not be absorbed by a clamp here.
    """
    if not 0.0 < s <= 1.0:
        raise DomainError(f"presence score must be in (0, 1], got {s}")
    if not 0.0 < h < 1.0:
        raise DomainError(f"treatment propensity must be in (0, 1), got {h}")
    return (
        mu1 - mu0
        + d * t * (y_o - mu1) / (s * h)
        - d * (1.0 - t) * (y_o - mu0) / (s * (1.0 - h))
    )


def signal_capd(y_o: float, dlogf: float, mu: float, dmu: float) -> float:
    """Robust average-partial-derivative signal
    ``-dlogf * (y_o - mu) + dmu``."""
    vals = (y_o, dlogf, mu, dmu)
    if not all(np.isfinite(v) for v in vals):
        raise DomainError(f"signal_capd requires finite inputs, got {vals}")
    return -dlogf * (y_o - mu) + dmu


def signal_ipw_missing(y_o: float, d: float, s: float) -> float:
    """IPW missing-outcome signal ``d * y_o / s``; requires s in (0, 1]."""
    if not 0.0 < s <= 1.0:
        raise DomainError(f"presence score must be in (0, 1], got {s}")
    return d * y_o / s


def signal_ipw_cate(y_o: float, d: float, s: float) -> float:
    """IPW treatment-effect signal ``(d - s) * y_o / (s (1 - s))``."""
    if not 0.0 < s < 1.0:
        raise DomainError(f"propensity must be in (0, 1), got {s}")
    return (d - s) * y_o / (s * (1.0 - s))


def _check_range(
    values: np.ndarray | None, name: str, lo: float, hi: float,
    lo_open: bool = True, hi_open: bool = True,
) -> np.ndarray:
    if values is None:
        raise DomainError(f"nuisance slot {name!r} is required but missing")
    v = np.asarray(values, dtype=float)
    bad_lo = v <= lo if lo_open else v < lo
    bad_hi = v >= hi if hi_open else v > hi
    bad = bad_lo | bad_hi | ~np.isfinite(v)
    if np.any(bad):
        first = int(np.flatnonzero(bad)[0])
        raise DomainError(
            f"{name} out of range at row {first}: value {v[first]!r} "
            f"(expected {'(' if lo_open else '['}{lo}, {hi}{')' if hi_open else ']'})"
        )
    return v


def _required(values: np.ndarray | None, name: str) -> np.ndarray:
    if values is None:
        raise DomainError(f"nuisance slot {name!r} is required but missing")
    v = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(v)):
        first = int(np.flatnonzero(~np.isfinite(v))[0])
        raise DomainError(f"{name} non-finite at row {first}")
    return v


def build_signals(data, nuis: NuisanceValues, kind: SignalKind) -> np.ndarray:
    """Elementwise signal construction for a dataset slice.

    ``data`` is any object exposing aligned arrays ``y_obs``, ``d`` and,
    where the kind needs them, ``t``.  Domain violations raise with the
    offending row index: trimming upstream should make them unreachable, so
    an occurrence points at a bug worth locating.
    """
    kind = SignalKind(kind)
    y = np.asarray(data.y_obs, dtype=float)
    d = np.asarray(data.d, dtype=float)
    if kind is SignalKind.ROBUST_MISSING:
        mu = _required(nuis.mu, "mu")
        s = _check_range(nuis.s, "s", 0.0, 1.0, hi_open=False)
        return mu + d * (y - mu) / s
    if kind is SignalKind.IPW_MISSING:
        s = _check_range(nuis.s, "s", 0.0, 1.0, hi_open=False)
        return d * y / s
    if kind is SignalKind.ROBUST_CATE:
        mu1 = _required(nuis.mu1, "mu1")
        mu0 = _required(nuis.mu0, "mu0")
        s = _check_range(nuis.s, "s", 0.0, 1.0)
        return mu1 - mu0 + d * (y - mu1) / s - (1.0 - d) * (y - mu0) / (1.0 - s)
    if kind is SignalKind.IPW_CATE:
        s = _check_range(nuis.s, "s", 0.0, 1.0)
        return (d - s) * y / (s * (1.0 - s))
    if kind is SignalKind.ROBUST_CATE_MISSING:
        if data.t is None:
            raise DomainError("dataset lacks the treatment column required by this kind")
        t = np.asarray(data.t, dtype=float)
        mu1 = _required(nuis.mu1, "mu1")
        mu0 = _required(nuis.mu0, "mu0")
        s = _check_range(nuis.s, "s", 0.0, 1.0, hi_open=False)
        h = _check_range(nuis.h, "h", 0.0, 1.0)
        return (
            mu1 - mu0
            + d * t * (y - mu1) / (s * h)
            - d * (1.0 - t) * (y - mu0) / (s * (1.0 - h))
        )
    if kind is SignalKind.ROBUST_CAPD:
        mu = _required(nuis.mu, "mu")
        dlogf = _required(nuis.dlogf, "dlogf")
        dmu = _required(nuis.dmu, "dmu")
        return -dlogf * (y - mu) + dmu
    raise DomainError(f"unsupported signal kind {kind!r}")  # pragma: no cover
