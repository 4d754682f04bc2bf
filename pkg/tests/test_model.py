import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from stepcure import (
    CureModel,
    FamilyKind,
    FamilyParams,
    StepStressModel,
    StressSchedule,
    bridge_coefficients,
    logistic_p,
    population_survival,
)


def weibull_model(a1=2.0, l1=0.5, a2=1.5, l2=1.0, tau1=1.0, tau2=1.5):
    theta = FamilyParams.from_vector(a1, a2, l1, l2)
    return StepStressModel(FamilyKind.WEIBULL, theta, StressSchedule(tau1, tau2))


def test_bridge_equal_endpoint_hazards_is_flat():
    # both segments exponential with the same rate: h is constant c
    c = 0.8
    theta = FamilyParams.from_vector(1.0, 1.0, c, c)
    bridge = bridge_coefficients(FamilyKind.WEIBULL, theta, StressSchedule(1.0, 2.0))
    assert bridge.a == pytest.approx(c, abs=1e-14)
    assert bridge.b == pytest.approx(0.0, abs=1e-14)


def test_bridge_two_by_two_solve():
    # h1(1) = 1 (unit exponential), h2(t) = 1.5 t so h2(2) = 3
    theta = FamilyParams.from_vector(1.0, 2.0, 1.0, 0.75)
    bridge = bridge_coefficients(FamilyKind.WEIBULL, theta, StressSchedule(1.0, 2.0))
    assert bridge.a == pytest.approx(-1.0, abs=1e-12)
    assert bridge.b == pytest.approx(2.0, abs=1e-12)


def test_bridge_reproduces_endpoint_hazards():
    from stepcure import base_hazard

    theta = FamilyParams.from_vector(2.0, 1.5, 0.5, 1.0)
    sched = StressSchedule(1.0, 1.5)
    bridge = bridge_coefficients(FamilyKind.WEIBULL, theta, sched)
    h1 = base_hazard(FamilyKind.WEIBULL, theta.seg1, 1.0)
    h2 = base_hazard(FamilyKind.WEIBULL, theta.seg2, 1.5)
    assert bridge.a + bridge.b * 1.0 == pytest.approx(h1, rel=1e-12)
    assert bridge.a + bridge.b * 1.5 == pytest.approx(h2, rel=1e-12)


def test_bridge_requires_positive_lag():
    theta = FamilyParams.from_vector(2.0, 1.5, 0.5, 1.0)
    with pytest.raises(ValueError, match="zero-lag"):
        bridge_coefficients(FamilyKind.WEIBULL, theta, StressSchedule(1.0, 1.0))


def test_hazard_segment_membership():
    m = weibull_model()
    from stepcure import base_hazard

    # t = tau1 belongs to segment 1
    assert m.hazard(1.0) == base_hazard(FamilyKind.WEIBULL, m.theta.seg1, 1.0)
    # interior of the lag: the linear bridge
    t_mid = 1.25
    assert m.hazard(t_mid) == pytest.approx(m.bridge.a + m.bridge.b * t_mid)
    # t = tau2 belongs to segment 3
    assert m.hazard(1.5) == base_hazard(FamilyKind.WEIBULL, m.theta.seg2, 1.5)


def test_hazard_continuity_at_boundaries():
    m = weibull_model()
    for tau in (1.0, 1.5):
        eps = 1e-9 * tau
        assert abs(m.hazard(tau - eps) - m.hazard(tau)) < 1e-8
        assert abs(m.hazard(tau + eps) - m.hazard(tau)) < 1e-8


def test_hazard_continuity_on_grid():
    m = weibull_model(a1=2.6, l1=0.22, a2=1.8, l2=1.14, tau1=1.0, tau2=1.4167)
    eps = 1e-6
    grid = np.linspace(1.0 - 10 * eps, 1.4167 + 10 * eps, 10_000)
    vals = m.hazard(grid)
    jumps = np.abs(np.diff(vals)) / np.maximum(np.abs(vals[:-1]), 1e-12)
    assert np.max(jumps) < 1e-3  # smooth at this grid resolution
    for tau in (1.0, 1.4167):
        e = 1e-9
        assert abs(m.hazard(tau - e) - m.hazard(tau + e)) < 1e-8 * max(1.0, m.hazard(tau))


def test_cum_hazard_first_piece_matches_family():
    from stepcure import base_cum_hazard

    m = weibull_model()
    for t in (0.2, 0.7, 1.0):
        assert m.cum_hazard(t) == base_cum_hazard(FamilyKind.WEIBULL, m.theta.seg1, t)


def test_cum_hazard_lag_piece_hand_value():
    # constructed so H1(tau1) = 0.5, a = -1, b = 2:
    # seg1 Weibull (2, 0.5) has h(1) = 1, H(1) = 0.5;
    # seg2 exponential rate 2 has h(1.5) = 2, so the bridge is a=-1, b=2
    theta = FamilyParams.from_vector(2.0, 1.0, 0.5, 2.0)
    m = StepStressModel(FamilyKind.WEIBULL, theta, StressSchedule(1.0, 1.5))
    assert m.bridge.a == pytest.approx(-1.0, abs=1e-12)
    assert m.bridge.b == pytest.approx(2.0, abs=1e-12)
    assert m.cum_hazard(1.5) == pytest.approx(1.25, abs=1e-12)


@pytest.mark.parametrize("kind,theta_vec", [
    (FamilyKind.WEIBULL, (2.0, 1.5, 0.5, 1.0)),
    (FamilyKind.LFR, (0.4, 1.2, 0.3, 2.0)),
    (FamilyKind.GE, (2.0, 1.4, 1.2, 2.0)),
])
def test_cum_hazard_matches_quadrature_of_hazard(kind, theta_vec):
    theta = FamilyParams.from_vector(*theta_vec)
    sched = StressSchedule(1.0, 1.4)
    m = StepStressModel(kind, theta, sched)
    for t in (0.5, 1.0, 1.2, 1.4, 2.8):
        pieces = [v for v in (0.0, 1.0, 1.4, t) if v <= t]
        oracle = 0.0
        for lo, hi in zip(pieces[:-1], pieces[1:]):
            val, _ = quad(m.hazard, lo, hi, epsabs=1e-12, epsrel=1e-11, limit=200)
            oracle += val
        assert m.cum_hazard(t) == pytest.approx(oracle, rel=1e-7)


def test_survival_and_density_identities():
    m = weibull_model()
    assert m.survival(0.0) == 1.0
    for t in (0.3, 1.0, 1.2, 1.5, 4.0):
        assert m.density(t) == pytest.approx(m.hazard(t) * m.survival(t), rel=1e-12)
    # numeric derivative of survival equals -density
    for t in (0.5, 1.25, 2.0):
        eps = 1e-6 * t
        fd = (m.survival(t + eps) - m.survival(t - eps)) / (2.0 * eps)
        assert -fd == pytest.approx(m.density(t), rel=1e-5)


def test_survival_tends_to_zero():
    m = weibull_model()
    assert m.survival(200.0) < 1e-12


def test_zero_lag_mode_cum_hazard_continuous_but_hazard_jumps():
    theta = FamilyParams.from_vector(1.0, 1.0, 0.5, 2.0)
    m = StepStressModel(FamilyKind.WEIBULL, theta, StressSchedule(1.0, 1.0))
    assert m.bridge is None
    eps = 1e-9
    assert abs(m.cum_hazard(1.0 + eps) - m.cum_hazard(1.0)) < 1e-8
    # exponential rates 0.5 -> 2.0: the hazard itself jumps at tau
    assert m.hazard(1.0) == pytest.approx(0.5)
    assert m.hazard(1.0 + eps) == pytest.approx(2.0)


def test_small_lag_agrees_with_zero_lag_mode():
    theta = FamilyParams.from_vector(2.0, 1.5, 0.5, 1.0)
    tiny = StepStressModel(FamilyKind.WEIBULL, theta, StressSchedule(1.0, 1.0 + 1e-6))
    kh = StepStressModel(FamilyKind.WEIBULL, theta, StressSchedule(1.0, 1.0))
    grid = np.concatenate([np.linspace(0.05, 1.0, 25), np.linspace(1.001, 5.0, 25)])
    a = tiny.cum_hazard(grid)
    b = kh.cum_hazard(grid)
    assert np.max(np.abs(a - b) / np.maximum(b, 1e-12)) < 1e-4


def test_cum_hazard_strictly_increasing():
    m = weibull_model(a1=2.6, l1=0.22, a2=1.8, l2=1.14, tau1=1.0, tau2=1.4167)
    grid = np.linspace(1e-3, 5.0, 2000)
    vals = m.cum_hazard(grid)
    assert np.all(np.diff(vals) > 0.0)


# -- cure layer -------------------------------------------------------------

def test_logistic_p_at_zero_coefficients():
    cure = CureModel((0.0, 0.0), ("x",))
    assert logistic_p(cure, np.array([1.0, 3.0])) == pytest.approx(0.5)


def test_logistic_p_monotone_in_covariates():
    # risk-factor signs: body fat and age lower the cure chance, aerobic
    # capacity raises it
    beta = (-1.8124, -3.9196, 3.6604, -0.2154)
    cure = CureModel(beta, ("bf", "vo2", "age"))
    base = np.array([1.0, 0.5, 0.5, 0.5])
    p0 = logistic_p(cure, base)
    assert 0.0 < p0 < 1.0
    up_bf = base.copy(); up_bf[1] += 0.3
    up_vo2 = base.copy(); up_vo2[2] += 0.3
    up_age = base.copy(); up_age[3] += 0.3
    assert logistic_p(cure, up_bf) < p0
    assert logistic_p(cure, up_vo2) > p0
    assert logistic_p(cure, up_age) < p0


def test_logistic_p_deep_underflow_is_exact_zero():
    cure = CureModel((-745.0,))
    with np.errstate(all="raise"):
        assert logistic_p(cure, np.array([1.0])) == 0.0


def test_logistic_p_dimension_mismatch():
    cure = CureModel((0.1, 0.2), ("x",))
    with pytest.raises(ValueError):
        logistic_p(cure, np.array([1.0, 2.0, 3.0]))
    with pytest.raises(ValueError):
        logistic_p(cure, np.array([2.0, 2.0]))


def test_population_survival_degenerate_and_limits():
    m = weibull_model()
    z = np.array([1.0])
    cure = CureModel.constant(0.3)
    assert population_survival(m, None, z, 0.7) == pytest.approx(m.survival(0.7))
    assert population_survival(m, cure, np.array([1.0]), 0.0) == pytest.approx(1.0)
    far = 1e6 * 1.5
    assert population_survival(m, cure, np.array([1.0]), far) == pytest.approx(0.3, abs=1e-9)


def test_population_survival_nonincreasing():
    m = weibull_model()
    cure = CureModel.constant(0.25)
    grid = np.linspace(0.0, 6.0, 500)
    vals = population_survival(m, cure, np.array([1.0]), grid)
    assert np.all(np.diff(vals) <= 1e-15)


@settings(max_examples=40, deadline=None)
@given(
    a1=st.floats(0.5, 4.0), a2=st.floats(0.5, 4.0),
    l1=st.floats(0.1, 3.0), l2=st.floats(0.1, 3.0),
    lag=st.floats(0.0, 1.5),
)
def test_model_invariants_property(a1, a2, l1, l2, lag):
    theta = FamilyParams.from_vector(a1, a2, l1, l2)
    m = StepStressModel(FamilyKind.WEIBULL, theta, StressSchedule(1.0, 1.0 + lag))
    grid = np.linspace(1e-3, 4.0, 200)
    cum = m.cum_hazard(grid)
    assert np.all(np.diff(cum) >= -1e-12)
    assert m.cum_hazard(0.0) == 0.0
    if lag > 0:
        eps = 1e-9
        for tau in (1.0, 1.0 + lag):
            assert abs(m.hazard(tau - eps) - m.hazard(tau + eps)) <= 1e-6 * max(1.0, m.hazard(tau))
