"""Piecewise step-stress lifetime model with a continuity bridge, plus the
cure-mixture layer.

The susceptible hazard follows the first-segment family up to the stress
change at tau1, a linear bridge a + b*t over the lag interval (tau1, tau2),
and the second-segment family from tau2 on.  The bridge coefficients are the
unique pair making the hazard continuous at both interval ends.  With a zero
lag (tau2 == tau1) there is no bridge: the hazard may jump at tau1 while the
cumulative hazard stays continuous (the Khamis-Higgins limiting mode).

Population survival mixes a cured fraction p (logistic in covariates) with
the susceptible survival: S_pop = p + (1 - p) * S0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .families import (
    FamilyKind,
    FamilyParams,
    base_cum_hazard,
    base_hazard,
    validate_params,
)


@dataclass(frozen=True)
class StressSchedule:
    """Stress-change point tau1, lag end tau2 >= tau1, optional censor time."""

    tau1: float
    tau2: float
    study_end: float | None = None

    def __post_init__(self):
        if not (0.0 < self.tau1 <= self.tau2):
            raise ValueError(f"need 0 < tau1 <= tau2, got tau1={self.tau1}, tau2={self.tau2}")
        if self.study_end is not None and not (self.study_end > self.tau2):
            raise ValueError(f"study_end must exceed tau2, got {self.study_end}")

    @property
    def delta(self) -> float:
        return self.tau2 - self.tau1

    def scaled(self, c: float) -> "StressSchedule":
        """The same schedule with all times divided by c."""
        end = None if self.study_end is None else self.study_end / c
        return StressSchedule(self.tau1 / c, self.tau2 / c, end)


@dataclass(frozen=True)
class Bridge:
    """Coefficients of the linear hazard a + b*t on the lag interval."""

    a: float
    b: float


def bridge_coefficients(kind: FamilyKind, theta: FamilyParams,
                        schedule: StressSchedule) -> Bridge:
    """The unique (a, b) joining the two segment hazards continuously.

    Solves a + b*tau1 = h1(tau1) and a + b*tau2 = h2(tau2).  Requires a
    positive lag; in the zero-lag mode there is no bridge segment.
    """
    if schedule.delta == 0.0:
        raise ValueError("no bridge in the zero-lag (Khamis-Higgins) mode")
    h1 = base_hazard(kind, theta.seg1, schedule.tau1)
    h2 = base_hazard(kind, theta.seg2, schedule.tau2)
    b = (h2 - h1) / schedule.delta
    a = h1 - b * schedule.tau1
    return Bridge(a, b)


@dataclass(frozen=True)
class StepStressModel:
    """A family kind, its parameters, a schedule, and the derived bridge."""

    kind: FamilyKind
    theta: FamilyParams
    schedule: StressSchedule
    bridge: Bridge | None = field(default=None)

    def __post_init__(self):
        validate_params(self.kind, self.theta)
        if self.bridge is None and self.schedule.delta > 0.0:
            object.__setattr__(
                self, "bridge", bridge_coefficients(self.kind, self.theta, self.schedule)
            )

    # -- susceptible quantities -------------------------------------------

    def hazard(self, t):
        """Piecewise hazard; t = tau1 belongs to segment 1, t = tau2 to segment 3."""
        scalar = np.ndim(t) == 0
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        tau1, tau2 = self.schedule.tau1, self.schedule.tau2
        out = np.empty(t_arr.shape, dtype=float)
        m1 = t_arr <= tau1
        if self.schedule.delta > 0.0:
            m2 = (t_arr > tau1) & (t_arr < tau2)
            m3 = t_arr >= tau2
        else:
            m2 = np.zeros(t_arr.shape, dtype=bool)
            m3 = t_arr > tau1
        if m1.any():
            out[m1] = base_hazard(self.kind, self.theta.seg1, t_arr[m1])
        if m2.any():
            out[m2] = self.bridge.a + self.bridge.b * t_arr[m2]
        if m3.any():
            out[m3] = base_hazard(self.kind, self.theta.seg2, t_arr[m3])
        return float(out[0]) if scalar else out

    def _lag_cum(self, t_arr):
        # H(tau1) + a (t - tau1) + (b/2)(t^2 - tau1^2) on the lag interval
        tau1 = self.schedule.tau1
        h_tau1 = base_cum_hazard(self.kind, self.theta.seg1, tau1)
        a, b = self.bridge.a, self.bridge.b
        return h_tau1 + a * (t_arr - tau1) + 0.5 * b * (t_arr * t_arr - tau1 * tau1)

    def _tail_shift(self) -> float:
        # additive constant making the segment-3 piece continue H at tau2
        tau1, tau2 = self.schedule.tau1, self.schedule.tau2
        base2_tau2 = base_cum_hazard(self.kind, self.theta.seg2, tau2)
        if self.schedule.delta > 0.0:
            return float(self._lag_cum(np.asarray(tau2))) - base2_tau2
        return base_cum_hazard(self.kind, self.theta.seg1, tau1) - base2_tau2

    def cum_hazard(self, t):
        """Continuous, nondecreasing cumulative hazard for t >= 0."""
        scalar = np.ndim(t) == 0
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        tau1, tau2 = self.schedule.tau1, self.schedule.tau2
        out = np.empty(t_arr.shape, dtype=float)
        m1 = t_arr <= tau1
        if self.schedule.delta > 0.0:
            m2 = (t_arr > tau1) & (t_arr < tau2)
            m3 = t_arr >= tau2
        else:
            m2 = np.zeros(t_arr.shape, dtype=bool)
            m3 = t_arr > tau1
        if m1.any():
            out[m1] = base_cum_hazard(self.kind, self.theta.seg1, t_arr[m1])
        if m2.any():
            out[m2] = self._lag_cum(t_arr[m2])
        if m3.any():
            out[m3] = self._tail_shift() + base_cum_hazard(self.kind, self.theta.seg2, t_arr[m3])
        return float(out[0]) if scalar else out

    def survival(self, t):
        """Susceptible survival S0(t) = exp(-H(t))."""
        return np.exp(-self.cum_hazard(t))

    def density(self, t):
        """Susceptible density f(t) = h(t) * S0(t) for t > 0."""
        return self.hazard(t) * self.survival(t)


@dataclass(frozen=True)
class CureModel:
    """Logistic cure-probability model.

    ``beta`` has length s+1 with the intercept first; ``p(z) = expit(beta' z)``
    for a covariate vector z with leading 1.  s = 0 encodes a constant cure
    probability expit(beta0).
    """

    beta: tuple[float, ...]
    covariate_names: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))
        if len(self.beta) != len(self.covariate_names) + 1:
            raise ValueError(
                f"beta has length {len(self.beta)} but expected "
                f"{len(self.covariate_names) + 1} (intercept + named covariates)"
            )

    @classmethod
    def constant(cls, p: float) -> "CureModel":
        """Covariate-free model with cure probability p in (0, 1)."""
        if not (0.0 < p < 1.0):
            raise ValueError(f"constant cure probability must be in (0,1), got {p}")
        return cls(beta=(float(np.log(p / (1.0 - p))),))

    @property
    def n_covariates(self) -> int:
        return len(self.beta) - 1

    def beta_array(self) -> np.ndarray:
        return np.asarray(self.beta, dtype=float)


def logistic_p(cure: CureModel, z):
    """Cure probability expit(beta' z) for z with leading 1.

    Accepts a single covariate vector or a matrix with one row per subject.
    Overflow-safe for arbitrarily large |beta' z|.
    """
    z_arr = np.asarray(z, dtype=float)
    beta = cure.beta_array()
    if z_arr.ndim == 1:
        if z_arr.shape[0] != beta.shape[0]:
            raise ValueError(f"z has length {z_arr.shape[0]}, expected {beta.shape[0]}")
        if z_arr[0] != 1.0:
            raise ValueError("covariate vector must carry a leading 1")
        return float(expit(z_arr @ beta))
    if z_arr.shape[1] != beta.shape[0]:
        raise ValueError(f"z has {z_arr.shape[1]} columns, expected {beta.shape[0]}")
    return expit(z_arr @ beta)


def population_survival(model: StepStressModel, cure: CureModel | None, z, t):
    """Mixture survival p + (1 - p) * S0(t); cure=None means p = 0."""
    s0 = model.survival(t)
    if cure is None:
        return s0
    p = logistic_p(cure, z)
    return p + (1.0 - p) * s0
