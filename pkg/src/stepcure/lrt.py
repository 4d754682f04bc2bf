"""Likelihood-ratio tests for the step-stress cure model.

Four nested comparisons are supported: equal shapes across stress levels,
unit shapes (exponential baselines for Weibull/GE), covariate significance
in the cure link, and presence of a cured fraction.  The last one tests a
boundary parameter, so its statistic follows the Self-Liang half-half
mixture of a point mass at zero and a chi-square(1).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import IntEnum

import numpy as np
from scipy.special import gammaincc

from .data import Dataset
from .errors import DataError
from .families import FamilyKind
from .fitting import EmConfig, FitResult, ThetaStructure, em_fit, fit_susceptible_only
from .model import StressSchedule


class TestProblem(IntEnum):
    EQUAL_SHAPES = 1
    EXPONENTIALITY = 2
    COVARIATE_SIGNIFICANCE = 3
    CURE_PRESENCE = 4


@dataclass(frozen=True)
class ReferenceDist:
    """Null reference: a chi-square or the half-half boundary mixture."""

    kind: str              # "chisq" or "half_half_chisq1"
    df: int | None = None

    def label(self) -> str:
        if self.kind == "chisq":
            return f"chisq({self.df})"
        return "0.5 + 0.5*chisq(1)"


@dataclass
class TestResult:
    problem: TestProblem
    statistic: float
    reference: ReferenceDist
    p_value: float
    l0: float
    l1: float
    clipped: bool = False


def chi_square_sf(w: float, df: int) -> float:
    """Upper-tail chi-square probability via the regularized incomplete gamma."""
    if w < 0:
        raise ValueError("w must be nonnegative")
    if df < 1:
        raise ValueError("df must be at least 1")
    return float(gammaincc(df / 2.0, w / 2.0))


def lrt(problem: TestProblem, l0: float, l1: float, s: int = 0) -> TestResult:
    """Likelihood-ratio statistic and p-value for the given problem.

    Small negative statistics (optimizer noise on nested fits) are clipped
    to zero and flagged.
    """
    problem = TestProblem(problem)
    w = -2.0 * (l0 - l1)
    clipped = w < 0.0
    w = max(w, 0.0)
    if problem is TestProblem.CURE_PRESENCE:
        ref = ReferenceDist("half_half_chisq1")
        p = 0.5 * chi_square_sf(w, 1) if w > 0.0 else 1.0
    else:
        df = s if problem is TestProblem.COVARIATE_SIGNIFICANCE else 1
        if df < 1:
            raise ValueError("covariate test needs at least one covariate")
        ref = ReferenceDist("chisq", df)
        p = chi_square_sf(w, df)
    return TestResult(problem=problem, statistic=w, reference=ref,
                      p_value=p, l0=l0, l1=l1, clipped=clipped)


def fit_restricted(problem: TestProblem, dataset: Dataset, schedule: StressSchedule,
                   kind: FamilyKind, config: EmConfig | None = None) -> FitResult:
    """Null-hypothesis fit for the given problem.

    Problem 1 shares one shape across segments, problem 2 pins both shapes
    at 1, problem 3 keeps only the cure intercept, problem 4 removes the
    cure mass entirely (censored records then carry the plain survival
    term).
    """
    problem = TestProblem(problem)
    config = config or EmConfig()
    if problem is TestProblem.EQUAL_SHAPES:
        return em_fit(dataset, schedule, kind,
                      replace(config, structure=ThetaStructure.SHARED_SHAPE))
    if problem is TestProblem.EXPONENTIALITY:
        return em_fit(dataset, schedule, kind,
                      replace(config, structure=ThetaStructure.UNIT_SHAPES))
    if problem is TestProblem.COVARIATE_SIGNIFICANCE:
        if dataset.s < 1:
            raise DataError("covariate significance test needs covariates in the dataset")
        return em_fit(dataset.drop_covariates(), schedule, kind, config)
    return fit_susceptible_only(dataset.drop_covariates(), schedule, kind,
                                replace(config, init_beta=None))


def _retarget_theta(theta, structure: ThetaStructure):
    """Project a full parameter point onto a restricted structure's manifold."""
    a1, a2, l1, l2 = theta.as_tuple()
    if structure is ThetaStructure.SHARED_SHAPE:
        shared = 0.5 * (a1 + a2)
        return type(theta).from_vector(shared, shared, l1, l2)
    if structure is ThetaStructure.UNIT_SHAPES:
        return type(theta).from_vector(1.0, 1.0, l1, l2)
    return theta


def _better(fit_a: FitResult, fit_b: FitResult) -> FitResult:
    return fit_a if fit_a.mll >= fit_b.mll else fit_b


def run_test(problem: TestProblem, dataset: Dataset, schedule: StressSchedule,
             kind: FamilyKind, config: EmConfig | None = None
             ) -> tuple[TestResult, FitResult, FitResult]:
    """Fit the null/alternative pair for a problem and run the test.

    Alternatives: problem 1 relaxes to the full four-parameter hazard;
    problem 2 relaxes to the shared-shape hazard, so the degrees of freedom
    stay at one; problem 3 relaxes to the full covariate cure link; problem
    4 compares no cure against an intercept-only cure mass (the covariate
    link is not part of this boundary test).

    Each restricted fit is run twice, once from the default start and once
    warm-started at the alternative's estimates projected onto the null
    manifold, keeping the better likelihood; the alternative is refit from
    the null solution whenever the null ends up ahead.  This keeps the
    nested-likelihood ordering a property of the fits rather than luck in
    the optimizer's start point.
    """
    problem = TestProblem(problem)
    config = config or EmConfig()
    if problem is TestProblem.EQUAL_SHAPES:
        alt_cfg = config
        fit1 = em_fit(dataset, schedule, kind, alt_cfg)
        warm = replace(config, init_theta=_retarget_theta(fit1.theta, ThetaStructure.SHARED_SHAPE),
                       init_p=fit1.p_hat if dataset.s == 0 else None,
                       init_beta=None if fit1.cure is None else fit1.cure.beta)
        fit0 = _better(fit_restricted(problem, dataset, schedule, kind, config),
                       fit_restricted(problem, dataset, schedule, kind, warm))
        alt_data = dataset
        s = 0
    elif problem is TestProblem.EXPONENTIALITY:
        alt_cfg = replace(config, structure=ThetaStructure.SHARED_SHAPE)
        fit1 = em_fit(dataset, schedule, kind, alt_cfg)
        warm = replace(config, init_theta=_retarget_theta(fit1.theta, ThetaStructure.UNIT_SHAPES),
                       init_p=fit1.p_hat if dataset.s == 0 else None,
                       init_beta=None if fit1.cure is None else fit1.cure.beta)
        fit0 = _better(fit_restricted(problem, dataset, schedule, kind, config),
                       fit_restricted(problem, dataset, schedule, kind, warm))
        alt_data = dataset
        s = 0
    elif problem is TestProblem.COVARIATE_SIGNIFICANCE:
        if dataset.s < 1:
            raise DataError("covariate significance test needs covariates in the dataset")
        alt_cfg = config
        fit1 = em_fit(dataset, schedule, kind, alt_cfg)
        warm = replace(config, init_theta=fit1.theta)
        fit0 = _better(fit_restricted(problem, dataset, schedule, kind, config),
                       fit_restricted(problem, dataset, schedule, kind, warm))
        alt_data = dataset
        s = dataset.s
    else:
        alt_cfg = config
        alt_data = dataset.drop_covariates()
        fit1 = em_fit(alt_data, schedule, kind, alt_cfg)
        warm = replace(config, init_theta=fit1.theta)
        fit0 = _better(fit_restricted(problem, dataset, schedule, kind, config),
                       fit_restricted(problem, dataset, schedule, kind, warm))
        s = 0
    if fit0.mll > fit1.mll + 1e-9:
        refit_p = None
        if alt_data.s == 0 and fit0.p_hat is not None and 0.0 < fit0.p_hat < 1.0:
            refit_p = fit0.p_hat
        refit_cfg = replace(alt_cfg, init_theta=fit0.theta, init_p=refit_p)
        fit1 = _better(fit1, em_fit(alt_data, schedule, kind, refit_cfg))
    result = lrt(problem, fit0.mll, fit1.mll, s)
    return result, fit0, fit1
