import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from stepcure import (
    EvaluationError,
    FamilyKind,
    SegmentParams,
    base_cum_hazard,
    base_cum_hazard_inverse,
    base_hazard,
)
from stepcure.families import rescale_params, validate_segment

ALL_KINDS = [FamilyKind.WEIBULL, FamilyKind.LFR, FamilyKind.GE]

# random-but-frozen parameter points per family, spanning shapes below and
# above 1 and small/large rates
PARAM_SETS = {
    FamilyKind.WEIBULL: [SegmentParams(0.7, 0.4), SegmentParams(2.0, 0.5),
                         SegmentParams(3.5, 1.3)],
    FamilyKind.LFR: [SegmentParams(0.5, 0.0), SegmentParams(1.0, 2.0),
                     SegmentParams(0.2, 0.8)],
    FamilyKind.GE: [SegmentParams(0.6, 0.9), SegmentParams(2.0, 1.0),
                    SegmentParams(4.0, 2.5)],
}


def test_weibull_hazard_value():
    assert base_hazard(FamilyKind.WEIBULL, SegmentParams(2.0, 0.5), 3.0) == pytest.approx(3.0)


def test_lfr_hazard_value():
    assert base_hazard(FamilyKind.LFR, SegmentParams(1.0, 2.0), 2.0) == pytest.approx(5.0)


def test_ge_hazard_reduces_to_constant_rate_at_unit_shape():
    p = SegmentParams(1.0, 0.7)
    for t in (0.01, 0.5, 3.0, 40.0):
        assert base_hazard(FamilyKind.GE, p, t) == pytest.approx(0.7, rel=1e-12)


def test_weibull_cum_hazard_value():
    assert base_cum_hazard(FamilyKind.WEIBULL, SegmentParams(2.0, 0.5), 3.0) == pytest.approx(4.5)


def test_lfr_cum_hazard_value():
    assert base_cum_hazard(FamilyKind.LFR, SegmentParams(1.0, 2.0), 2.0) == pytest.approx(6.0)


def test_ge_cum_hazard_matches_quadrature():
    p = SegmentParams(2.0, 1.0)
    val = base_cum_hazard(FamilyKind.GE, p, 1.0)
    oracle, err = quad(lambda u: base_hazard(FamilyKind.GE, p, u), 0.0, 1.0,
                       epsabs=1e-13, epsrel=1e-12)
    assert err < 1e-10
    assert val == pytest.approx(oracle, rel=1e-8)


def test_weibull_inverse_value():
    assert base_cum_hazard_inverse(FamilyKind.WEIBULL, SegmentParams(2.0, 0.5), 4.5) == pytest.approx(3.0)


def test_lfr_inverse_value():
    assert base_cum_hazard_inverse(FamilyKind.LFR, SegmentParams(1.0, 2.0), 6.0) == pytest.approx(2.0)


def _bisect_inverse(kind, p, target, lo=0.0, hi=1e6):
    # independent inverse: bisection on the cumulative hazard
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if base_cum_hazard(kind, p, mid) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def test_ge_inverse_round_trips():
    p = SegmentParams(2.0, 1.0)
    for h in (0.1, 1.0, 5.0):
        t = base_cum_hazard_inverse(FamilyKind.GE, p, h)
        assert base_cum_hazard(FamilyKind.GE, p, t) == pytest.approx(h, rel=1e-10)
        assert t == pytest.approx(_bisect_inverse(FamilyKind.GE, p, h, hi=100.0), rel=1e-8)


@pytest.mark.parametrize("kind", ALL_KINDS)
def test_cum_hazard_at_zero_and_monotone(kind):
    for p in PARAM_SETS[kind]:
        assert base_cum_hazard(kind, p, 0.0) == 0.0
        grid = np.geomspace(1e-3, 1e3, 60)
        vals = base_cum_hazard(kind, p, grid)
        assert np.all(np.diff(vals) > 0.0)


@pytest.mark.parametrize("kind", ALL_KINDS)
def test_hazard_matches_finite_difference_of_cum_hazard(kind):
    for p in PARAM_SETS[kind]:
        for t in np.geomspace(0.1, 10.0, 7):
            eps = 1e-6 * t
            fd = (base_cum_hazard(kind, p, t + eps)
                  - base_cum_hazard(kind, p, t - eps)) / (2.0 * eps)
            assert base_hazard(kind, p, t) == pytest.approx(fd, rel=1e-5)


def test_exponential_reduction_identities():
    rate = 0.8
    grid = np.geomspace(1e-3, 50.0, 40)
    wei = SegmentParams(1.0, rate)
    ge = SegmentParams(1.0, rate)
    lfr = SegmentParams(rate, 0.0)
    for t in grid:
        h_ref = rate
        cum_ref = rate * t
        assert base_hazard(FamilyKind.WEIBULL, wei, t) == pytest.approx(h_ref, rel=1e-12)
        assert base_hazard(FamilyKind.GE, ge, t) == pytest.approx(h_ref, rel=1e-12)
        assert base_hazard(FamilyKind.LFR, lfr, t) == pytest.approx(h_ref, rel=1e-12)
        assert base_cum_hazard(FamilyKind.WEIBULL, wei, t) == pytest.approx(cum_ref, rel=1e-12)
        assert base_cum_hazard(FamilyKind.GE, ge, t) == pytest.approx(cum_ref, rel=1e-12)
        assert base_cum_hazard(FamilyKind.LFR, lfr, t) == pytest.approx(cum_ref, rel=1e-12)


@pytest.mark.parametrize("kind", ALL_KINDS)
def test_inverse_round_trip_across_scales(kind):
    for p in PARAM_SETS[kind]:
        for t in np.geomspace(1e-3, 1e3, 25):
            h = base_cum_hazard(kind, p, t)
            back = base_cum_hazard_inverse(kind, p, h)
            assert back == pytest.approx(t, rel=1e-10)
        assert base_cum_hazard_inverse(kind, p, 0.0) == 0.0


def test_ge_cum_hazard_precision_for_tiny_arguments():
    mpmath = pytest.importorskip("mpmath")
    mpmath.mp.dps = 50
    for alpha in (0.3, 0.5, 2.0):
        p = SegmentParams(alpha, 1.0)
        for t in (1e-5, 1e-6, 5e-8):
            # reference in 50-digit arithmetic: -log(1 - (1 - e^{-t})^alpha)
            u = -mpmath.expm1(-mpmath.mpf(t))
            ref = -mpmath.log(1 - u ** mpmath.mpf(alpha))
            val = base_cum_hazard(FamilyKind.GE, p, t)
            assert abs(val - float(ref)) <= 1e-12 * float(ref)


@pytest.mark.parametrize("kind", ALL_KINDS)
def test_rescaled_params_reproduce_distribution(kind):
    for p in PARAM_SETS[kind]:
        for c in (0.25, 240.0):
            q = rescale_params(kind, p, c)
            for t in (0.2, 1.0, 3.7):
                # T' = T / c: H'(t) must equal H(c t)
                assert base_cum_hazard(kind, q, t) == pytest.approx(
                    base_cum_hazard(kind, p, c * t), rel=1e-12)


def test_overflow_reports_evaluation_error():
    p = SegmentParams(500.0, 1.0)
    with pytest.raises(EvaluationError) as exc:
        base_cum_hazard(FamilyKind.WEIBULL, p, 1e6)
    assert exc.value.kind is FamilyKind.WEIBULL


def test_validate_segment_contracts():
    validate_segment(FamilyKind.LFR, SegmentParams(1.0, 0.0))
    with pytest.raises(ValueError):
        validate_segment(FamilyKind.WEIBULL, SegmentParams(1.0, 0.0))
    with pytest.raises(ValueError):
        validate_segment(FamilyKind.GE, SegmentParams(-1.0, 1.0))


@settings(max_examples=60, deadline=None)
@given(
    kind=st.sampled_from(ALL_KINDS),
    alpha=st.floats(0.2, 8.0),
    lam=st.floats(0.05, 20.0),
    t=st.floats(1e-3, 1e3),
)
def test_round_trip_property(kind, alpha, lam, t):
    p = SegmentParams(alpha, lam)
    h = base_cum_hazard(kind, p, t)
    assert base_cum_hazard_inverse(kind, p, h) == pytest.approx(t, rel=1e-9)


@settings(max_examples=60, deadline=None)
@given(
    kind=st.sampled_from(ALL_KINDS),
    alpha=st.floats(0.2, 8.0),
    lam=st.floats(0.05, 20.0),
)
def test_cum_hazard_increasing_property(kind, alpha, lam):
    p = SegmentParams(alpha, lam)
    grid = np.geomspace(1e-2, 1e2, 30)
    vals = base_cum_hazard(kind, p, grid)
    assert np.all(np.diff(vals) > 0.0)
