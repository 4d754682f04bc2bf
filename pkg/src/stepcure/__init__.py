"""Step-stress lifetime models with a cured fraction.

Parametric piecewise hazards with a continuity bridge over a lag interval,
a logistic cure mixture, EM maximum likelihood with profile search over the
lag, likelihood-ratio tests, Kaplan-Meier goodness of fit, and an exact
sampler with a replication-study runner.
"""

from .data import Dataset, SubjectRecord
from .errors import (
    CalibrationError,
    DataError,
    EvaluationError,
    InsufficientDataError,
    MStepError,
    NumericalError,
    StepCureError,
)
from .families import (
    FamilyKind,
    FamilyParams,
    SegmentParams,
    base_cum_hazard,
    base_cum_hazard_inverse,
    base_hazard,
    rescale_theta,
)
from .fitting import (
    EmConfig,
    FitResult,
    Partition,
    ProfileResult,
    ThetaStructure,
    crude_init,
    e_step_weights,
    em_fit,
    fit_susceptible_only,
    log_likelihood,
    m_step_beta,
    m_step_p_closed_form,
    m_step_theta,
    numeric_gradient,
    numeric_hessian,
    partition,
    profile_fit_delta,
    pseudo_loglik,
)
from .lrt import TestProblem, TestResult, chi_square_sf, fit_restricted, lrt, run_test
from .model import (
    Bridge,
    CureModel,
    StepStressModel,
    StressSchedule,
    bridge_coefficients,
    logistic_p,
    population_survival,
)
from .nonparam import StepSurvival, averaged_population_survival, kaplan_meier, ks_distance
from .simulate import (
    SimConfig,
    StudySummary,
    calibrate_study_end,
    mean_cure_probability,
    run_study,
    sample_susceptible_time,
    sample_susceptible_times,
    simulate_dataset,
)

__version__ = "0.1.0"
