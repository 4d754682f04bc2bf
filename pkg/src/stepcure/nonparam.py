"""Kaplan-Meier estimation and a Kolmogorov-Smirnov fit distance.

The product-limit estimator groups tied times; censored observations tied
with an event are treated as censored just after the event (they stay in
the risk set for that event).  The K-S distance compares the empirical
curve with a fitted survival function at the jump points, using both
one-sided limits, and the asymptotic Kolmogorov distribution with the
number of events as the effective sample size.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import kolmogorov

from .errors import DataError

TIE_NOTE = "censored times tied with an event are treated as censored after the event"
KS_NOTE = "effective sample size = number of events; fitted curve is the population survival"


@dataclass
class StepSurvival:
    """Right-continuous survival step function from the product-limit estimate."""

    times: np.ndarray      # distinct event times, increasing
    survival: np.ndarray   # value just after each event time
    at_risk: np.ndarray
    events: np.ndarray
    n: int
    n_events: int
    tie_note: str = TIE_NOTE

    def eval(self, t, side: str = "right"):
        """Step-function value at t; side="left" gives the limit from below."""
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.times, t, side="right" if side == "right" else "left")
        vals = np.concatenate([[1.0], self.survival])
        out = vals[idx]
        return float(out) if t.ndim == 0 else out


def kaplan_meier(times, events) -> StepSurvival:
    """Product-limit survival estimate under right censoring."""
    t = np.asarray(times, dtype=float)
    e = np.asarray(events, dtype=bool)
    if t.size == 0:
        raise DataError("no observations")
    n = t.size
    order = np.argsort(t, kind="stable")
    t, e = t[order], e[order]
    uniq, start = np.unique(t, return_index=True)
    deaths = np.add.reduceat(e.astype(int), start)
    at_risk = n - start
    keep = deaths > 0
    surv = np.cumprod(1.0 - deaths[keep] / at_risk[keep])
    return StepSurvival(
        times=uniq[keep],
        survival=surv,
        at_risk=at_risk[keep].astype(int),
        events=deaths[keep].astype(int),
        n=n,
        n_events=int(e.sum()),
    )


@dataclass
class KsResult:
    distance: float
    p_value: float
    n_effective: int
    note: str = KS_NOTE


def ks_distance(km: StepSurvival, survival_fn) -> KsResult:
    """Sup distance between the KM curve and a fitted survival function.

    Both one-sided KM limits are compared at every jump point.  The p-value
    uses the asymptotic Kolmogorov distribution at sqrt(m) * D with m the
    number of events.
    """
    if km.n_events == 0:
        raise DataError("K-S distance needs at least one event")
    fitted = np.asarray(survival_fn(km.times), dtype=float)
    left = np.concatenate([[1.0], km.survival[:-1]])
    d = float(np.max(np.maximum(np.abs(left - fitted), np.abs(km.survival - fitted))))
    p = float(kolmogorov(np.sqrt(km.n_events) * d))
    return KsResult(distance=d, p_value=p, n_effective=km.n_events)


def averaged_population_survival(model, cure, design):
    """Population survival averaged over the subjects' own covariate rows.

    ``design`` is the (n, s+1) matrix with leading ones; with cure=None or a
    constant this reduces to a single mixture curve.
    """
    from .model import logistic_p

    if cure is None:
        p = np.zeros(1)
    elif np.isscalar(cure):
        p = np.asarray([float(cure)])
    else:
        p = np.atleast_1d(logistic_p(cure, design))

    def fn(t):
        s0 = model.survival(t)
        s0 = np.atleast_1d(np.asarray(s0, dtype=float))
        out = p[:, None] + (1.0 - p[:, None]) * s0[None, :]
        mean = out.mean(axis=0)
        return float(mean[0]) if np.ndim(t) == 0 else mean

    return fn
