"""Baseline lifetime families used on each stress segment.

Three two-parameter families are supported: Weibull, linear failure rate
(LFR), and the generalized (exponentiated) exponential (GE).  Each exposes
its hazard, cumulative hazard, and the closed-form inverse of the
cumulative hazard.  All functions accept scalars or numpy arrays for the
time/level argument and are pure.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import EvaluationError

_LOG_HALF = -0.6931471805599453


class FamilyKind(str, Enum):
    WEIBULL = "weibull"
    LFR = "lfr"
    GE = "ge"


@dataclass(frozen=True)
class SegmentParams:
    """Parameters of one segment's baseline family.

    ``alpha`` is the shape (Weibull, GE) or the intercept rate (LFR);
    ``lam`` is the scale/rate (Weibull, GE) or the slope rate (LFR).
    """

    alpha: float
    lam: float


@dataclass(frozen=True)
class FamilyParams:
    """The four-parameter vector (alpha1, alpha2, lambda1, lambda2)."""

    seg1: SegmentParams
    seg2: SegmentParams

    @classmethod
    def from_vector(cls, alpha1, alpha2, lam1, lam2) -> "FamilyParams":
        return cls(SegmentParams(float(alpha1), float(lam1)),
                   SegmentParams(float(alpha2), float(lam2)))

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.seg1.alpha, self.seg2.alpha, self.seg1.lam, self.seg2.lam)


def validate_segment(kind: FamilyKind, p: SegmentParams) -> None:
    """Raise ValueError unless ``p`` is a valid parameter point for ``kind``.

    LFR permits ``lam == 0`` (exponential sub-model); the other families
    require a strictly positive scale.
    """
    if not (p.alpha > 0.0) or not np.isfinite(p.alpha):
        raise ValueError(f"alpha must be positive and finite, got {p.alpha}")
    if kind is FamilyKind.LFR:
        if p.lam < 0.0 or not np.isfinite(p.lam):
            raise ValueError(f"LFR lambda must be >= 0 and finite, got {p.lam}")
    elif not (p.lam > 0.0) or not np.isfinite(p.lam):
        raise ValueError(f"lambda must be positive and finite, got {p.lam}")


def validate_params(kind: FamilyKind, theta: FamilyParams) -> None:
    validate_segment(kind, theta.seg1)
    validate_segment(kind, theta.seg2)


def _log1mexp(x):
    """log(1 - exp(x)) for x <= 0, accurate in both regimes.

    Uses expm1 for x > log(1/2) and log1p otherwise so that the result
    keeps full relative precision whether 1 - exp(x) is near 0 or near 1.
    """
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        out = np.where(x > _LOG_HALF, np.log(-np.expm1(x)), np.log1p(-np.exp(x)))
    return out


def _wei_hazard(alpha, lam, t):
    return alpha * lam * np.power(t, alpha - 1.0)


def _wei_cum(alpha, lam, t):
    return lam * np.power(t, alpha)


def _wei_inv(alpha, lam, h):
    return np.power(h / lam, 1.0 / alpha)


def _lfr_hazard(alpha, lam, t):
    return alpha + lam * np.asarray(t, dtype=float)


def _lfr_cum(alpha, lam, t):
    t = np.asarray(t, dtype=float)
    return alpha * t + 0.5 * lam * t * t


def _lfr_inv(alpha, lam, h):
    # nonnegative root of (lam/2) t^2 + alpha t - h = 0, stable as lam -> 0
    h = np.asarray(h, dtype=float)
    return 2.0 * h / (alpha + np.sqrt(alpha * alpha + 2.0 * lam * h))


def _ge_log_u(lam, t):
    # log(1 - exp(-lam t)), exact for tiny lam*t
    with np.errstate(divide="ignore"):
        return np.log(-np.expm1(-lam * np.asarray(t, dtype=float)))


def _ge_hazard(alpha, lam, t):
    t = np.asarray(t, dtype=float)
    log_u = _ge_log_u(lam, t)
    log_num = np.log(alpha * lam) - lam * t + (alpha - 1.0) * log_u
    return np.exp(log_num - _log1mexp(alpha * log_u))


def _ge_cum(alpha, lam, t):
    # H = -log(1 - u^alpha) with u = 1 - exp(-lam t)
    return -_log1mexp(alpha * _ge_log_u(lam, t))


def _ge_inv(alpha, lam, h):
    h = np.asarray(h, dtype=float)
    log_w = _log1mexp(-h)  # log(1 - exp(-H))
    return -_log1mexp(log_w / alpha) / lam


_HAZARD = {FamilyKind.WEIBULL: _wei_hazard, FamilyKind.LFR: _lfr_hazard, FamilyKind.GE: _ge_hazard}
_CUM = {FamilyKind.WEIBULL: _wei_cum, FamilyKind.LFR: _lfr_cum, FamilyKind.GE: _ge_cum}
_INV = {FamilyKind.WEIBULL: _wei_inv, FamilyKind.LFR: _lfr_inv, FamilyKind.GE: _ge_inv}


def _finalize(kind, p, t, out):
    if not np.all(np.isfinite(out)):
        raise EvaluationError(kind, p, t)
    if np.ndim(out) == 0:
        return float(out)
    return out


def base_hazard(kind: FamilyKind, p: SegmentParams, t):
    """Baseline hazard h(t) of the family at one stress level (t > 0)."""
    with np.errstate(over="ignore"):
        out = _HAZARD[kind](p.alpha, p.lam, t)
    return _finalize(kind, p, t, out)


def base_cum_hazard(kind: FamilyKind, p: SegmentParams, t):
    """Baseline cumulative hazard H(t) = integral of the hazard on [0, t]."""
    with np.errstate(over="ignore"):
        out = _CUM[kind](p.alpha, p.lam, t)
    return _finalize(kind, p, t, out)


def base_cum_hazard_inverse(kind: FamilyKind, p: SegmentParams, h):
    """The time t with H(t) = h; closed form for all three families."""
    with np.errstate(over="ignore", divide="ignore"):
        out = _INV[kind](p.alpha, p.lam, h)
    out = np.where(np.asarray(h, dtype=float) == 0.0, 0.0, out)
    return _finalize(kind, p, h, out)


def rescale_params(kind: FamilyKind, p: SegmentParams, c: float) -> SegmentParams:
    """Parameters of the same distribution after measuring time in units of c.

    If T has hazard h(t; p) then T' = T / c has hazard c*h(c t; p), which
    stays inside the family; this returns the matching parameter point.
    """
    if kind is FamilyKind.WEIBULL:
        return SegmentParams(p.alpha, p.lam * c ** p.alpha)
    if kind is FamilyKind.LFR:
        return SegmentParams(p.alpha * c, p.lam * c * c)
    return SegmentParams(p.alpha, p.lam * c)


def rescale_theta(kind: FamilyKind, theta: FamilyParams, c: float) -> FamilyParams:
    """Apply :func:`rescale_params` to both segments."""
    return FamilyParams(rescale_params(kind, theta.seg1, c),
                        rescale_params(kind, theta.seg2, c))
