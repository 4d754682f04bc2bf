"""Observed-data likelihood, EM fitting, and the lag-profile grid search.

The observed log-likelihood splits into an event part (log density by
segment, plus log susceptibility) and a censored part (log of the cure
mixture).  The EM algorithm treats each censored subject's cure indicator
as missing: the E-step produces membership weights (w1 cured, w2
susceptible), the M-step maximizes the resulting pseudo log-likelihood,
which separates into a weighted Bernoulli likelihood g1 for the cure
coefficients and a weighted survival likelihood g2 for the hazard
parameters.  Both M-steps are safeguarded so they never decrease their
objective, which makes the recorded observed log-likelihood trace
nondecreasing up to floating-point rounding.

All fitting runs on a normalized time scale t / tau1 by default; the
divisor is recorded in the result so estimates are interpretable.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np
from scipy.optimize import brentq, minimize
from scipy.special import expit, log_expit

from .data import Dataset
from .errors import (
    DataError,
    EvaluationError,
    InsufficientDataError,
    MStepError,
    NumericalError,
)
from .families import (
    _CUM,
    _HAZARD,
    FamilyKind,
    FamilyParams,
    SegmentParams,
)
from .model import CureModel, StressSchedule

_PENALTY = 1e12
DEFAULT_ALPHA_BOUNDS = (1e-6, 1e6)
DEFAULT_LAMBDA_BOUNDS = (1e-6, 1e6)


class ThetaStructure(str, Enum):
    """Which hazard parameters are free during optimization."""

    FULL = "full"                  # (alpha1, alpha2, lambda1, lambda2)
    SHARED_SHAPE = "shared_shape"  # alpha1 = alpha2 free, both lambdas free
    UNIT_SHAPES = "unit_shapes"    # alpha1 = alpha2 = 1 fixed, lambdas free


_THETA_NAMES = {
    ThetaStructure.FULL: ("alpha1", "alpha2", "lambda1", "lambda2"),
    ThetaStructure.SHARED_SHAPE: ("alpha", "lambda1", "lambda2"),
    ThetaStructure.UNIT_SHAPES: ("lambda1", "lambda2"),
}


def theta_param_names(structure: ThetaStructure) -> tuple[str, ...]:
    return _THETA_NAMES[structure]


def pack_theta(structure: ThetaStructure, theta: FamilyParams) -> np.ndarray:
    a1, a2, l1, l2 = theta.as_tuple()
    if structure is ThetaStructure.FULL:
        return np.array([a1, a2, l1, l2])
    if structure is ThetaStructure.SHARED_SHAPE:
        return np.array([a1, l1, l2])
    return np.array([l1, l2])


def unpack_theta(structure: ThetaStructure, vec) -> FamilyParams:
    vec = np.asarray(vec, dtype=float)
    if structure is ThetaStructure.FULL:
        return FamilyParams.from_vector(vec[0], vec[1], vec[2], vec[3])
    if structure is ThetaStructure.SHARED_SHAPE:
        return FamilyParams.from_vector(vec[0], vec[0], vec[1], vec[2])
    return FamilyParams.from_vector(1.0, 1.0, vec[0], vec[1])


@dataclass
class EmConfig:
    """Convergence control and optimizer settings for :func:`em_fit`.

    ``inner_optimizer`` selects the M-step maximizer for the hazard
    parameters: "newton" runs a box-constrained quasi-Newton method with
    numeric derivatives, "nelder-mead" a bounded simplex search.
    """

    tol: float = 1e-8
    max_iter: int = 500
    inner_optimizer: str = "newton"
    inner_max_iter: int = 80
    alpha_bounds: tuple[float, float] = DEFAULT_ALPHA_BOUNDS
    lambda_bounds: tuple[float, float] = DEFAULT_LAMBDA_BOUNDS
    beta_bound: float = 30.0
    newton_max_iter: int = 50
    structure: ThetaStructure = ThetaStructure.FULL
    normalize: bool = True
    compute_se: bool = True
    se_rel_step: float = 1e-4
    init_theta: FamilyParams | None = None
    init_beta: tuple[float, ...] | None = None
    init_p: float | None = None

    def theta_bounds(self, structure: ThetaStructure, kind: FamilyKind):
        ab = self.alpha_bounds
        lb = self.lambda_bounds
        if kind is FamilyKind.LFR:
            lb = (0.0, lb[1])
        if structure is ThetaStructure.FULL:
            return [ab, ab, lb, lb]
        if structure is ThetaStructure.SHARED_SHAPE:
            return [ab, lb, lb]
        return [lb, lb]


@dataclass(frozen=True)
class Partition:
    """Index sets: I1/I2/I3 events by segment, I4 all censored records."""

    i1: np.ndarray
    i2: np.ndarray
    i3: np.ndarray
    i4: np.ndarray

    @property
    def n1(self) -> int: return self.i1.size

    @property
    def n2(self) -> int: return self.i2.size

    @property
    def n3(self) -> int: return self.i3.size

    @property
    def n4(self) -> int: return self.i4.size

    @property
    def m(self) -> int: return self.n1 + self.n2 + self.n3


def partition(dataset: Dataset, schedule: StressSchedule) -> Partition:
    """Split records by segment; events at tau1 go to I1, at tau2 to I3."""
    t = dataset.times
    ev = dataset.events
    tau1, tau2 = schedule.tau1, schedule.tau2
    m1 = ev & (t <= tau1)
    if schedule.delta > 0.0:
        m2 = ev & (t > tau1) & (t < tau2)
        m3 = ev & (t >= tau2)
    else:
        m2 = np.zeros(t.shape, dtype=bool)
        m3 = ev & (t > tau1)
    idx = np.arange(t.shape[0])
    return Partition(idx[m1], idx[m2], idx[m3], idx[~ev])


@dataclass
class _FitData:
    """Pre-partitioned arrays the likelihood internals operate on.

    The log/power/moment caches make the hot g2 objective cheap: the event
    log-hazard sums collapse to closed forms in them for the Weibull family.
    """

    t1: np.ndarray
    t2: np.ndarray
    t3: np.ndarray
    t4: np.ndarray
    z_events: np.ndarray   # (m, s+1), ordered I1, I2, I3
    z_cens: np.ndarray     # (n4, s+1), ordered as partition.i4
    t4_m1: np.ndarray
    t4_m2: np.ndarray
    t4_m3: np.ndarray
    t4_1: np.ndarray
    t4_2: np.ndarray
    t4_3: np.ndarray
    log_t1: np.ndarray
    log_t3: np.ndarray
    log_t4_1: np.ndarray
    log_t4_3: np.ndarray
    sum_log_t1: float
    sum_log_t3: float
    sum_t2: float
    sum_t2_sq: float
    n: int
    part: Partition


def _prepare(dataset: Dataset, schedule: StressSchedule, part: Partition) -> _FitData:
    t = dataset.times
    z = dataset.design_matrix()
    t4 = t[part.i4]
    tau1, tau2 = schedule.tau1, schedule.tau2
    m1 = t4 <= tau1
    if schedule.delta > 0.0:
        m2 = (t4 > tau1) & (t4 < tau2)
        m3 = t4 >= tau2
    else:
        m2 = np.zeros(t4.shape, dtype=bool)
        m3 = t4 > tau1
    ev_idx = np.concatenate([part.i1, part.i2, part.i3])
    t1, t2, t3 = t[part.i1], t[part.i2], t[part.i3]
    t4_1, t4_2, t4_3 = t4[m1], t4[m2], t4[m3]
    log_t1 = np.log(t1)
    log_t3 = np.log(t3)
    return _FitData(
        t1=t1, t2=t2, t3=t3, t4=t4,
        z_events=z[ev_idx], z_cens=z[part.i4],
        t4_m1=m1, t4_m2=m2, t4_m3=m3,
        t4_1=t4_1, t4_2=t4_2, t4_3=t4_3,
        log_t1=log_t1, log_t3=log_t3,
        log_t4_1=np.log(t4_1), log_t4_3=np.log(t4_3),
        sum_log_t1=float(np.sum(log_t1)), sum_log_t3=float(np.sum(log_t3)),
        sum_t2=float(np.sum(t2)), sum_t2_sq=float(np.sum(t2 * t2)),
        n=dataset.n, part=part,
    )


def _consts(kind: FamilyKind, theta: FamilyParams, schedule: StressSchedule):
    """Bridge coefficients and cumulative-hazard offsets for fast evaluation."""
    tau1, tau2 = schedule.tau1, schedule.tau2
    s1, s2 = theta.seg1, theta.seg2
    haz = _HAZARD[kind]
    cum = _CUM[kind]
    h1_tau1 = float(cum(s1.alpha, s1.lam, tau1))
    if schedule.delta > 0.0:
        r1 = float(haz(s1.alpha, s1.lam, tau1))
        r2 = float(haz(s2.alpha, s2.lam, tau2))
        b = (r2 - r1) / schedule.delta
        a = r1 - b * tau1
        h02_tau2 = h1_tau1 + a * schedule.delta + 0.5 * b * (tau2 * tau2 - tau1 * tau1)
        shift = h02_tau2 - float(cum(s2.alpha, s2.lam, tau2))
    else:
        a = b = 0.0
        shift = h1_tau1 - float(cum(s2.alpha, s2.lam, tau1))
    return a, b, h1_tau1, shift


def _cum_hazard_censored(kind, theta, schedule, fd: _FitData, consts) -> np.ndarray:
    a, b, h1_tau1, shift = consts
    s1, s2 = theta.seg1, theta.seg2
    cum = _CUM[kind]
    tau1 = schedule.tau1
    out = np.empty(fd.t4.shape)
    if fd.t4_m1.any():
        out[fd.t4_m1] = cum(s1.alpha, s1.lam, fd.t4[fd.t4_m1])
    if fd.t4_m2.any():
        t = fd.t4[fd.t4_m2]
        out[fd.t4_m2] = h1_tau1 + a * (t - tau1) + 0.5 * b * (t * t - tau1 * tau1)
    if fd.t4_m3.any():
        out[fd.t4_m3] = shift + cum(s2.alpha, s2.lam, fd.t4[fd.t4_m3])
    return out


def _g3_value(kind, theta, schedule, fd: _FitData, consts) -> float:
    """Sum of event log-densities over I1, I2, I3; -inf if any density is 0.

    Callers are expected to run under an errstate that silences log/overflow
    warnings; non-finite intermediates surface as a -inf return value.
    """
    a, b, h1_tau1, shift = consts
    s1, s2 = theta.seg1, theta.seg2
    haz = _HAZARD[kind]
    cum = _CUM[kind]
    tau1 = schedule.tau1
    total = 0.0
    if fd.t1.size:
        total += np.sum(np.log(haz(s1.alpha, s1.lam, fd.t1)))
        total -= np.sum(cum(s1.alpha, s1.lam, fd.t1))
    if fd.t2.size:
        lin = a + b * fd.t2
        if np.any(lin <= 0.0):
            return -np.inf
        total += np.sum(np.log(lin))
        total -= np.sum(h1_tau1 + a * (fd.t2 - tau1)
                        + 0.5 * b * (fd.t2 * fd.t2 - tau1 * tau1))
    if fd.t3.size:
        total += np.sum(np.log(haz(s2.alpha, s2.lam, fd.t3)))
        total -= np.sum(shift + cum(s2.alpha, s2.lam, fd.t3))
    return float(total) if np.isfinite(total) else -np.inf


def _g2_split(kind, theta, schedule, fd: _FitData, w2_1, w2_2, w2_3) -> float:
    """g2 with the censored weights pre-split by segment.

    Hot path of the M-step; the Weibull branch uses the cached log-time
    sufficient statistics so each call costs only a few vector passes.
    Callers silence numpy warnings; invalid parameter points come back -inf.
    """
    s1, s2 = theta.seg1, theta.seg2
    tau1, tau2 = schedule.tau1, schedule.tau2
    if kind is FamilyKind.WEIBULL:
        a1, l1, a2, l2 = s1.alpha, s1.lam, s2.alpha, s2.lam
        h1_tau1 = a1 * l1 * tau1 ** (a1 - 1.0)
        cum1_tau1 = l1 * tau1 ** a1
        if schedule.delta > 0.0:
            h2_tau2 = a2 * l2 * tau2 ** (a2 - 1.0)
            b = (h2_tau2 - h1_tau1) / schedule.delta
            a = h1_tau1 - b * tau1
            h02_tau2 = cum1_tau1 + a * schedule.delta + 0.5 * b * (tau2 * tau2 - tau1 * tau1)
            shift = h02_tau2 - l2 * tau2 ** a2
        else:
            a = b = 0.0
            shift = cum1_tau1 - l2 * tau1 ** a2
        total = fd.t1.size * math.log(a1 * l1) + (a1 - 1.0) * fd.sum_log_t1
        total -= l1 * float(np.sum(np.exp(a1 * fd.log_t1)))
        if fd.t2.size:
            lin = a + b * fd.t2
            if np.any(lin <= 0.0):
                return -np.inf
            total += float(np.sum(np.log(lin)))
            total -= (fd.t2.size * (cum1_tau1 - a * tau1 - 0.5 * b * tau1 * tau1)
                      + a * fd.sum_t2 + 0.5 * b * fd.sum_t2_sq)
        total += fd.t3.size * math.log(a2 * l2) + (a2 - 1.0) * fd.sum_log_t3
        total -= fd.t3.size * shift + l2 * float(np.sum(np.exp(a2 * fd.log_t3)))
        if fd.t4_1.size:
            total -= l1 * float(np.dot(w2_1, np.exp(a1 * fd.log_t4_1)))
        if fd.t4_2.size:
            t = fd.t4_2
            total -= float(np.dot(w2_2, cum1_tau1 + a * (t - tau1)
                                  + 0.5 * b * (t * t - tau1 * tau1)))
        if fd.t4_3.size:
            total -= (shift * float(np.sum(w2_3))
                      + l2 * float(np.dot(w2_3, np.exp(a2 * fd.log_t4_3))))
        return total if np.isfinite(total) else -np.inf
    consts = _consts(kind, theta, schedule)
    val = _g3_value(kind, theta, schedule, fd, consts)
    if not np.isfinite(val):
        return -np.inf
    a, b, h1_tau1, shift = consts
    cum = _CUM[kind]
    if fd.t4_1.size:
        val -= float(np.dot(w2_1, cum(s1.alpha, s1.lam, fd.t4_1)))
    if fd.t4_2.size:
        t = fd.t4_2
        val -= float(np.dot(w2_2, h1_tau1 + a * (t - tau1)
                            + 0.5 * b * (t * t - tau1 * tau1)))
    if fd.t4_3.size:
        val -= float(np.dot(w2_3, shift + cum(s2.alpha, s2.lam, fd.t4_3)))
    return val if np.isfinite(val) else -np.inf


def _g2_value(kind, theta, schedule, fd: _FitData, w2) -> float:
    """g3 plus the weighted censored survival term sum(w2 * ln S0)."""
    w2 = np.asarray(w2, dtype=float)
    try:
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            return _g2_split(kind, theta, schedule, fd,
                             w2[fd.t4_m1], w2[fd.t4_m2], w2[fd.t4_m3])
    except (EvaluationError, FloatingPointError, ValueError, OverflowError):
        return -np.inf


def _observed_value(kind, theta, schedule, fd: _FitData, log_p_cens,
                    log1m_p_events_sum, log1m_p_cens) -> float:
    """Observed log-likelihood given precomputed cure-probability logs."""
    try:
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            consts = _consts(kind, theta, schedule)
            val = _g3_value(kind, theta, schedule, fd, consts)
            if not np.isfinite(val):
                return -np.inf
            val += log1m_p_events_sum
            if fd.t4.size:
                h0 = _cum_hazard_censored(kind, theta, schedule, fd, consts)
                # ln(p + (1-p) S0) = logaddexp(ln p, ln(1-p) - H), stable
                # at both the p -> 0 and S0 -> 0 extremes
                val += float(np.sum(np.logaddexp(log_p_cens, log1m_p_cens - h0)))
    except (EvaluationError, FloatingPointError, ValueError, OverflowError):
        return -np.inf
    return val if np.isfinite(val) else -np.inf


def _cure_logs(cure, z_events, z_cens):
    """(sum ln(1-p) over events, ln p over censored, ln(1-p) over censored).

    ``cure`` may be a CureModel, a constant probability in [0, 1), or None
    (p identically 0).
    """
    n4 = z_cens.shape[0]
    if cure is None:
        return 0.0, np.full(n4, -np.inf), np.zeros(n4)
    if isinstance(cure, CureModel):
        beta = cure.beta_array()
        eta_ev = z_events @ beta
        eta_c = z_cens @ beta
        return (float(np.sum(log_expit(-eta_ev))),
                log_expit(eta_c), log_expit(-eta_c))
    p = float(cure)
    if not (0.0 <= p < 1.0):
        raise ValueError(f"constant cure probability must be in [0,1), got {p}")
    log_p = math.log(p) if p > 0.0 else -np.inf
    log_1mp = math.log1p(-p)
    m = z_events.shape[0]
    return m * log_1mp, np.full(n4, log_p), np.full(n4, log_1mp)


def log_likelihood(kind: FamilyKind, theta: FamilyParams, cure,
                   dataset: Dataset, schedule: StressSchedule) -> float:
    """Observed-data log-likelihood on the given time scale.

    ``cure`` is a CureModel, a constant cure probability, or None for p = 0.
    Returns -inf (rather than raising) when an event lands where the model
    puts zero density.
    """
    part = partition(dataset, schedule)
    fd = _prepare(dataset, schedule, part)
    lse, lpc, l1pc = _cure_logs(cure, fd.z_events, fd.z_cens)
    return _observed_value(kind, theta, schedule, fd, lpc, lse, l1pc)


def e_step_weights(kind: FamilyKind, theta: FamilyParams, cure,
                   t, z=None, schedule: StressSchedule = None):
    """Cure/susceptible membership probabilities for censored subjects.

    w1 = p / (p + (1-p) S0(t)), w2 = 1 - w1 computed as the exact
    complement.  ``z`` is the design row(s) with leading 1 (ignored for a
    constant-p cure model).
    """
    from .model import StepStressModel, logistic_p

    model = StepStressModel(kind, theta, schedule)
    s0 = model.survival(t)
    if cure is None:
        p = 0.0
    elif isinstance(cure, CureModel):
        p = logistic_p(cure, z)
    else:
        p = float(cure)
    denom = p + (1.0 - p) * s0
    w1 = np.where(denom > 0.0, np.divide(p, denom, where=denom > 0.0), 1.0)
    w1 = np.clip(w1, 0.0, 1.0)
    return w1, 1.0 - w1


def _weights_internal(kind, theta, schedule, fd, log_p_cens, log1m_p_cens):
    """E-step weights for the censored records from precomputed logs."""
    if fd.t4.size == 0:
        return np.empty(0), np.empty(0)
    consts = _consts(kind, theta, schedule)
    h0 = _cum_hazard_censored(kind, theta, schedule, fd, consts)
    log_surv_part = log1m_p_cens - h0
    with np.errstate(invalid="ignore"):
        w1 = expit(log_p_cens - log_surv_part)
    w1 = np.where(np.isneginf(log_p_cens), 0.0, w1)
    return w1, 1.0 - w1


@dataclass(frozen=True)
class PseudoLoglik:
    """The two addends of the EM surrogate objective."""

    g1: float
    g2: float

    @property
    def total(self) -> float:
        return self.g1 + self.g2


def pseudo_loglik(kind: FamilyKind, theta: FamilyParams, cure,
                  dataset: Dataset, schedule: StressSchedule,
                  theta_k: FamilyParams, cure_k) -> PseudoLoglik:
    """EM surrogate g1(cure part) + g2(hazard part) with weights at (theta_k, cure_k)."""
    part = partition(dataset, schedule)
    fd = _prepare(dataset, schedule, part)
    _, lpc_k, l1pc_k = _cure_logs(cure_k, fd.z_events, fd.z_cens)
    w1, w2 = _weights_internal(kind, theta_k, schedule, fd, lpc_k, l1pc_k)
    lse, lpc, l1pc = _cure_logs(cure, fd.z_events, fd.z_cens)
    with np.errstate(invalid="ignore"):
        g1 = lse
        if fd.t4.size:
            term1 = np.where(w1 > 0.0, w1 * lpc, 0.0)
            term2 = np.where(w2 > 0.0, w2 * l1pc, 0.0)
            g1 += float(np.sum(term1) + np.sum(term2))
    g2 = _g2_value(kind, theta, schedule, fd, w2)
    return PseudoLoglik(g1=float(g1), g2=g2)


# ---------------------------------------------------------------------------
# M-steps
# ---------------------------------------------------------------------------

def m_step_p_closed_form(w1, n: int) -> float:
    """Covariate-free cure-probability update: sum of censored w1 over n."""
    if n <= 0:
        raise ValueError("n must be positive")
    w1 = np.asarray(w1, dtype=float)
    return float(np.sum(w1) / n)


def _g1_value(z, targets, beta):
    eta = z @ beta
    lp = log_expit(eta)
    l1p = log_expit(-eta)
    with np.errstate(invalid="ignore"):
        val = np.sum(np.where(targets > 0.0, targets * lp, 0.0))
        val += np.sum(np.where(targets < 1.0, (1.0 - targets) * l1p, 0.0))
    return float(val)


def _newton_beta(z, targets, beta_init, bound, tol, max_iter):
    """Maximize the fractional-label Bernoulli likelihood by damped Newton."""
    beta = np.clip(np.asarray(beta_init, dtype=float), -bound, bound)
    value = _g1_value(z, targets, beta)
    grad = np.empty_like(beta)
    for _ in range(max_iter):
        p = expit(z @ beta)
        grad = z.T @ (targets - p)
        at_hi = (beta >= bound) & (grad > 0)
        at_lo = (beta <= -bound) & (grad < 0)
        proj = np.where(at_hi | at_lo, 0.0, grad)
        if np.max(np.abs(proj)) < tol:
            return beta, float(np.max(np.abs(proj)))
        w = p * (1.0 - p)
        hess = (z * w[:, None]).T @ z
        ridge = 0.0
        while True:
            try:
                step = np.linalg.solve(hess + ridge * np.eye(hess.shape[0]), grad)
                break
            except np.linalg.LinAlgError:
                ridge = max(ridge * 10.0, 1e-10)
        lam = 1.0
        improved = False
        for _ in range(40):
            cand = np.clip(beta + lam * step, -bound, bound)
            cand_val = _g1_value(z, targets, cand)
            if cand_val >= value:
                beta, value, improved = cand, cand_val, True
                break
            lam *= 0.5
        if not improved:
            # no ascent direction left at this scale; accept if stationary
            break
    p = expit(z @ beta)
    grad = z.T @ (targets - p)
    at_hi = (beta >= bound) & (grad > 0)
    at_lo = (beta <= -bound) & (grad < 0)
    proj_norm = float(np.max(np.abs(np.where(at_hi | at_lo, 0.0, grad))))
    if proj_norm >= tol:
        raise MStepError(beta, proj_norm)
    return beta, proj_norm


def m_step_beta(design, targets, beta_init, covariate_names: tuple[str, ...] = (),
                bound: float = 30.0, tol: float = 1e-6, max_iter: int = 50) -> CureModel:
    """Maximize g1 over the cure coefficients.

    ``design`` is the (n, s+1) matrix with leading ones; ``targets`` the
    cure-membership probabilities (0 for events, w1 for censored records).
    """
    beta, _ = _newton_beta(np.asarray(design, dtype=float),
                           np.asarray(targets, dtype=float),
                           beta_init, bound, tol, max_iter)
    return CureModel(tuple(beta), covariate_names)


def _minimize_theta(kind, schedule, fd, w2, theta_init, config: EmConfig) -> FamilyParams:
    structure = config.structure
    bounds = config.theta_bounds(structure, kind)
    lo = [b[0] for b in bounds]
    hi = [b[1] for b in bounds]
    x0 = np.clip(pack_theta(structure, theta_init), lo, hi)
    w2 = np.asarray(w2, dtype=float)
    w2_1, w2_2, w2_3 = w2[fd.t4_m1], w2[fd.t4_m2], w2[fd.t4_m3]

    def nll(x):
        try:
            val = _g2_split(kind, unpack_theta(structure, x), schedule, fd,
                            w2_1, w2_2, w2_3)
        except (EvaluationError, FloatingPointError, ValueError, OverflowError):
            return _PENALTY
        return -val if np.isfinite(val) else _PENALTY

    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        f0 = nll(x0)
        if config.inner_optimizer == "nelder-mead":
            res = minimize(nll, x0, method="Nelder-Mead", bounds=bounds,
                           options={"maxiter": max(200, 80 * x0.size),
                                    "xatol": 1e-10, "fatol": 1e-12})
        else:
            res = minimize(nll, x0, method="L-BFGS-B", bounds=bounds,
                           options={"maxiter": config.inner_max_iter})
        x = np.clip(res.x, lo, hi)
        if nll(x) <= f0:
            return unpack_theta(structure, x)
    return theta_init


def m_step_theta(kind: FamilyKind, dataset: Dataset, schedule: StressSchedule,
                 w2, theta_init: FamilyParams, config: EmConfig | None = None) -> FamilyParams:
    """Maximize g2 over the hazard parameters under the configured box.

    ``w2`` is aligned with the censored records in dataset order.  Operates
    on the given time scale (no normalization is applied here).
    """
    config = config or EmConfig()
    part = partition(dataset, schedule)
    fd = _prepare(dataset, schedule, part)
    if len(np.atleast_1d(w2)) != part.n4:
        raise ValueError(f"w2 has length {len(np.atleast_1d(w2))}, expected {part.n4}")
    return _minimize_theta(kind, schedule, fd, np.atleast_1d(w2), theta_init, config)


# ---------------------------------------------------------------------------
# Initialization
# ---------------------------------------------------------------------------

def _weibull_crude(times) -> tuple[float, float]:
    """Complete-sample Weibull fit of (alpha, lambda); cheap and deterministic."""
    t = np.asarray(times, dtype=float)
    n = t.size
    if n < 2 or np.ptp(t) == 0.0:
        return 1.0, n / float(np.sum(t))
    lt = np.log(t)
    mlt = float(lt.mean())

    def score(alpha):
        ta = np.power(t, alpha)
        return float(np.dot(ta, lt) / np.sum(ta) - 1.0 / alpha - mlt)

    lo, hi = 1e-2, 1.0
    while score(hi) < 0.0 and hi < 64.0:
        hi *= 2.0
    try:
        alpha = brentq(score, lo, hi, xtol=1e-10) if score(lo) < 0.0 < score(hi) else 1.0
    except ValueError:
        alpha = 1.0
    alpha = float(np.clip(alpha, 0.2, 20.0))
    lam = n / float(np.sum(np.power(t, alpha)))
    return alpha, lam


def _crude_segment(kind: FamilyKind, times) -> SegmentParams:
    t = np.asarray(times, dtype=float)
    rate = t.size / float(np.sum(t))
    if kind is FamilyKind.WEIBULL:
        alpha, lam = _weibull_crude(t)
        return SegmentParams(alpha, lam)
    if kind is FamilyKind.LFR:
        return SegmentParams(rate, 0.0)
    return SegmentParams(1.0, rate)


def _clip_theta(theta: FamilyParams, kind: FamilyKind, config: EmConfig,
                structure: ThetaStructure) -> FamilyParams:
    bounds = config.theta_bounds(structure, kind)
    vec = np.clip(pack_theta(structure, theta),
                  [b[0] for b in bounds], [b[1] for b in bounds])
    return unpack_theta(structure, vec)


def crude_init(kind: FamilyKind, dataset: Dataset, schedule: StressSchedule,
               config: EmConfig | None = None) -> FamilyParams:
    """Segment-wise starting values: segment-1 events drive the first-segment
    parameters and segment-3 events the second, ignoring the bridge."""
    config = config or EmConfig()
    part = partition(dataset, schedule)
    if part.n1 == 0 or part.n3 == 0:
        raise InsufficientDataError("1" if part.n1 == 0 else "3")
    seg1 = _crude_segment(kind, dataset.times[part.i1])
    seg2 = _crude_segment(kind, dataset.times[part.i3])
    theta = FamilyParams(seg1, seg2)
    if config.structure is ThetaStructure.SHARED_SHAPE:
        shared = 0.5 * (seg1.alpha + seg2.alpha)
        theta = FamilyParams(SegmentParams(shared, seg1.lam),
                             SegmentParams(shared, seg2.lam))
    elif config.structure is ThetaStructure.UNIT_SHAPES:
        r1 = part.n1 / float(np.sum(dataset.times[part.i1]))
        r3 = part.n3 / float(np.sum(dataset.times[part.i3]))
        theta = FamilyParams.from_vector(1.0, 1.0, r1, r3)
    return _clip_theta(theta, kind, config, config.structure)


# ---------------------------------------------------------------------------
# Numeric derivatives and observed information
# ---------------------------------------------------------------------------

def _steps(x, rel_step):
    return rel_step * np.maximum(np.abs(x), 1e-2)


def numeric_gradient(fun, x, rel_step: float = 1e-4) -> np.ndarray:
    """Central-difference gradient with per-component relative steps."""
    x = np.asarray(x, dtype=float)
    h = _steps(x, rel_step)
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h[i]
        g[i] = (fun(x + e) - fun(x - e)) / (2.0 * h[i])
    return g


def numeric_hessian(fun, x, rel_step: float = 1e-4) -> np.ndarray:
    """Central-difference Hessian with per-component relative steps."""
    x = np.asarray(x, dtype=float)
    k = x.size
    h = _steps(x, rel_step)
    hess = np.empty((k, k))
    f0 = fun(x)
    for i in range(k):
        ei = np.zeros(k)
        ei[i] = h[i]
        hess[i, i] = (fun(x + ei) - 2.0 * f0 + fun(x - ei)) / (h[i] * h[i])
        for j in range(i + 1, k):
            ej = np.zeros(k)
            ej[j] = h[j]
            val = (fun(x + ei + ej) - fun(x + ei - ej)
                   - fun(x - ei + ej) + fun(x - ei - ej)) / (4.0 * h[i] * h[j])
            hess[i, j] = hess[j, i] = val
    return hess


# ---------------------------------------------------------------------------
# Fit result and the EM driver
# ---------------------------------------------------------------------------

@dataclass
class FitResult:
    """Output of a maximum-likelihood fit on the fitting time scale."""

    kind: FamilyKind
    structure: ThetaStructure
    theta: FamilyParams
    cure: CureModel | None
    p_hat: float | None
    mll: float
    param_names: tuple[str, ...]
    estimates: np.ndarray
    se: np.ndarray | None
    iterations: int
    converged: bool
    trace: list[float]
    time_scale: float
    schedule: StressSchedule
    n_events: int
    n_censored: int
    se_message: str | None = None

    @property
    def n_params(self) -> int:
        return len(self.param_names)


def _standardizers(covariates: np.ndarray):
    """Median/IQR per column; spread falls back to 1 for constant columns."""
    center = np.median(covariates, axis=0)
    q75, q25 = np.percentile(covariates, [75, 25], axis=0)
    spread = q75 - q25
    spread = np.where(spread > 0.0, spread, 1.0)
    return center, spread


def _destandardize_beta(beta_std, center, spread):
    beta = np.empty_like(beta_std)
    beta[1:] = beta_std[1:] / spread
    beta[0] = beta_std[0] - float(np.sum(beta_std[1:] * center / spread))
    return beta


def _se_for_result(kind, schedule, fd, structure, theta, cure_tail, config,
                   s, covariate_names):
    """Standard errors from the observed information at the reporting scale.

    ``cure_tail`` is [] (cure fixed at 0), [p] (constant cure), or the
    destandardized beta vector.
    """
    k_theta = len(theta_param_names(structure))

    def ll_of(vec):
        th = unpack_theta(structure, vec[:k_theta])
        if any(v <= 0 for v in (th.seg1.alpha, th.seg2.alpha)):
            return -np.inf
        if kind is not FamilyKind.LFR and (th.seg1.lam <= 0 or th.seg2.lam <= 0):
            return -np.inf
        if kind is FamilyKind.LFR and (th.seg1.lam < 0 or th.seg2.lam < 0):
            return -np.inf
        tail = vec[k_theta:]
        if s >= 1:
            cure = CureModel(tuple(tail), covariate_names)
        elif tail.size == 1:
            if not (0.0 < tail[0] < 1.0):
                return -np.inf
            cure = float(tail[0])
        else:
            cure = None
        lse, lpc, l1pc = _cure_logs(cure, fd.z_events, fd.z_cens)
        return _observed_value(kind, th, schedule, fd, lpc, lse, l1pc)

    x = np.concatenate([pack_theta(structure, theta), np.asarray(cure_tail, dtype=float)])
    try:
        hess = numeric_hessian(ll_of, x, config.se_rel_step)
    except (EvaluationError, FloatingPointError):
        return None, "observed information could not be evaluated"
    if not np.all(np.isfinite(hess)):
        return None, "observed information could not be evaluated"
    eig = np.linalg.eigvalsh(hess)
    if eig.max() >= 0.0:
        return None, "observed information is not negative definite"
    cov = np.linalg.inv(-hess)
    d = np.diag(cov)
    if np.any(d <= 0.0):
        return None, "observed information is not negative definite"
    return np.sqrt(d), None


def em_fit(dataset: Dataset, schedule: StressSchedule, kind: FamilyKind,
           config: EmConfig | None = None) -> FitResult:
    """EM maximum-likelihood fit of the step-stress cure model.

    Alternates cure-membership weights (E) with closed-form/Newton updates
    for the cure part and a box-constrained search for the hazard part (M),
    until the observed log-likelihood gain drops below ``config.tol``.
    """
    config = config or EmConfig()
    scale = schedule.tau1 if config.normalize else 1.0
    ds = dataset.scaled_times(scale) if scale != 1.0 else dataset
    sched = schedule.scaled(scale) if scale != 1.0 else schedule
    part = partition(ds, sched)
    if part.n1 == 0:
        raise InsufficientDataError("1")
    if part.n3 == 0:
        raise InsufficientDataError("3")
    fd = _prepare(ds, sched, part)
    s = ds.s
    n = ds.n

    theta = config.init_theta or crude_init(kind, ds, sched, config)
    theta = _clip_theta(theta, kind, config, config.structure)

    p0 = part.n4 / (2.0 * n)
    if config.init_p is not None:
        if not (0.0 <= config.init_p < 1.0):
            raise ValueError(f"init_p must be in [0,1), got {config.init_p}")
        p0 = config.init_p
    if s >= 1:
        center, spread = _standardizers(ds.covariates)
        z_all = np.vstack([fd.z_events, fd.z_cens]).copy()
        z_all[:, 1:] = (z_all[:, 1:] - center) / spread
        ze_std = z_all[: part.m]
        zc_std = z_all[part.m:]
        if config.init_beta is not None:
            if len(config.init_beta) != s + 1:
                raise ValueError(f"init_beta needs length {s + 1}, got {len(config.init_beta)}")
            beta_std = np.asarray(config.init_beta, dtype=float).copy()
            beta_std[0] += float(np.sum(beta_std[1:] * center))
            beta_std[1:] *= spread
        else:
            logit0 = np.log(p0 / (1.0 - p0)) if p0 > 0.0 else -config.beta_bound
            beta_std = np.concatenate([[logit0], np.zeros(s)])
        beta_std = np.clip(beta_std, -config.beta_bound, config.beta_bound)

        def std_logs():
            eta_ev = ze_std @ beta_std
            eta_c = zc_std @ beta_std
            return (float(np.sum(log_expit(-eta_ev))),
                    log_expit(eta_c), log_expit(-eta_c))

        lse, lpc, l1pc = std_logs()
    else:
        p = p0 if part.n4 else 0.0
        lse, lpc, l1pc = _cure_logs(p if p > 0.0 else None, fd.z_events, fd.z_cens)

    ll = _observed_value(kind, theta, sched, fd, lpc, lse, l1pc)
    trace = [ll]
    converged = False
    iterations = 0
    for iterations in range(1, config.max_iter + 1):
        prev_state = (theta, beta_std.copy() if s >= 1 else p)
        w1, w2 = _weights_internal(kind, theta, sched, fd, lpc, l1pc)
        if s >= 1:
            targets = np.concatenate([np.zeros(part.m), w1])
            beta_std, _ = _newton_beta(z_all, targets, beta_std, config.beta_bound,
                                       1e-6, config.newton_max_iter)
            lse, lpc, l1pc = std_logs()
        else:
            p = m_step_p_closed_form(w1, n) if part.n4 else 0.0
            lse, lpc, l1pc = _cure_logs(p if p > 0.0 else None, fd.z_events, fd.z_cens)
        theta = _minimize_theta(kind, sched, fd, w2, theta, config)
        ll_new = _observed_value(kind, theta, sched, fd, lpc, lse, l1pc)
        if ll_new < ll:
            # surrogate ascent guarantees mathematical monotonicity; a drop
            # can only be rounding noise, so keep the previous iterate
            theta = prev_state[0]
            if s >= 1:
                beta_std = prev_state[1]
            else:
                p = prev_state[1]
            converged = True
            iterations -= 1
            break
        trace.append(ll_new)
        if abs(ll_new - ll) < config.tol:
            ll = ll_new
            converged = True
            break
        ll = ll_new
    ll = trace[-1]

    names = list(theta_param_names(config.structure))
    est = list(pack_theta(config.structure, theta))
    if s >= 1:
        beta = _destandardize_beta(beta_std, center, spread)
        cure = CureModel(tuple(beta), ds.covariate_names)
        p_hat = None
        names += ["beta0"] + [f"beta_{c}" for c in ds.covariate_names]
        est += list(beta)
        cure_tail = beta
    else:
        p_hat = p
        cure = CureModel((float(np.log(p / (1.0 - p))),)) if 0.0 < p < 1.0 else None
        names.append("p")
        est.append(p_hat)
        cure_tail = np.array([p_hat]) if 0.0 < p_hat < 1.0 else np.empty(0)

    se = None
    se_message = None
    if config.compute_se:
        se, se_message = _se_for_result(kind, sched, fd, config.structure, theta,
                                        cure_tail, config, s, ds.covariate_names)
        if se is not None and cure_tail.size == 0 and s == 0:
            se = np.append(se, np.nan)
            se_message = "cure probability at the boundary; its SE is unavailable"

    return FitResult(
        kind=kind, structure=config.structure, theta=theta, cure=cure,
        p_hat=p_hat, mll=ll, param_names=tuple(names),
        estimates=np.asarray(est, dtype=float), se=se,
        iterations=iterations, converged=converged, trace=trace,
        time_scale=scale, schedule=sched,
        n_events=part.m, n_censored=part.n4, se_message=se_message,
    )


def fit_susceptible_only(dataset: Dataset, schedule: StressSchedule, kind: FamilyKind,
                         config: EmConfig | None = None) -> FitResult:
    """Maximum-likelihood fit with the cure mass fixed at zero.

    Censored records contribute the proper survival term ln S0; no EM is
    needed since there is no missing cure indicator.
    """
    config = config or EmConfig()
    scale = schedule.tau1 if config.normalize else 1.0
    ds = dataset.scaled_times(scale) if scale != 1.0 else dataset
    sched = schedule.scaled(scale) if scale != 1.0 else schedule
    part = partition(ds, sched)
    if part.n1 == 0:
        raise InsufficientDataError("1")
    if part.n3 == 0:
        raise InsufficientDataError("3")
    fd = _prepare(ds, sched, part)
    w2 = np.ones(part.n4)
    theta0 = config.init_theta or crude_init(kind, ds, sched, config)
    theta0 = _clip_theta(theta0, kind, config, config.structure)
    inner = replace(config, inner_max_iter=max(config.inner_max_iter, 200))
    theta = _minimize_theta(kind, sched, fd, w2, theta0, inner)
    ll0 = _g2_value(kind, theta0, sched, fd, w2)
    ll = _g2_value(kind, theta, sched, fd, w2)
    names = theta_param_names(config.structure)
    se = None
    se_message = None
    if config.compute_se:
        se, se_message = _se_for_result(kind, sched, fd, config.structure, theta,
                                        np.empty(0), config, 0, ())
    return FitResult(
        kind=kind, structure=config.structure, theta=theta, cure=None,
        p_hat=0.0, mll=ll, param_names=tuple(names),
        estimates=pack_theta(config.structure, theta), se=se,
        iterations=1, converged=True, trace=[ll0, ll],
        time_scale=scale, schedule=sched,
        n_events=part.m, n_censored=part.n4, se_message=se_message,
    )


# ---------------------------------------------------------------------------
# Profile search over the lag end point
# ---------------------------------------------------------------------------

@dataclass
class ProfilePoint:
    tau2: float
    fit: FitResult | None
    error: str | None = None


@dataclass
class ProfileResult:
    best_tau2: float
    best_fit: FitResult
    points: list[ProfilePoint]


def _profile_one(args):
    dataset, kind, tau1, tau2, config = args
    try:
        fit = em_fit(dataset, StressSchedule(tau1, tau2), kind, config)
        return ProfilePoint(tau2, fit)
    except (DataError, NumericalError, ValueError) as exc:
        return ProfilePoint(tau2, None, f"{type(exc).__name__}: {exc}")


def profile_fit_delta(dataset: Dataset, kind: FamilyKind, tau1: float,
                      tau2_grid, config: EmConfig | None = None,
                      workers: int = 1) -> ProfileResult:
    """Grid search over the lag end point tau2 by maximized log-likelihood.

    Candidates are fitted independently (optionally in parallel); ties are
    broken toward the smallest tau2.  Failed candidates are recorded and
    excluded; only an all-failure grid raises.
    """
    grid = [float(v) for v in tau2_grid]
    if not grid:
        raise ValueError("tau2 grid is empty")
    if any(v < tau1 for v in grid):
        raise ValueError("every tau2 candidate must be >= tau1")
    config = config or EmConfig()
    scan_cfg = replace(config, compute_se=False)
    jobs = [(dataset, kind, tau1, t2, scan_cfg) for t2 in grid]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            points = list(pool.map(_profile_one, jobs))
    else:
        points = [_profile_one(j) for j in jobs]

    best = None
    for pt in sorted(points, key=lambda p: p.tau2):
        if pt.fit is None:
            continue
        if best is None or pt.fit.mll > best.fit.mll:
            best = pt
    if best is None:
        raise NumericalError(
            "all profile candidates failed: "
            + "; ".join(f"tau2={p.tau2}: {p.error}" for p in points)
        )
    best_fit = em_fit(dataset, StressSchedule(tau1, best.tau2), kind, config)
    return ProfileResult(best_tau2=best.tau2, best_fit=best_fit, points=points)
