"""Nonparametric survival machinery shared by every learner and loss.

Implements the product-limit (Kaplan-Meier) estimator, the conditional
censoring survival curve fitted on a landmark risk set, inverse
probability of censoring weights for a prediction window, and the
Breslow cumulative baseline hazard for Cox-form linear predictors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset, PredictionWindow, risk_set
from .exceptions import DomainError, EstimabilityError

__all__ = [
    "StepFunction",
    "IpcwWeights",
    "kaplan_meier",
    "censoring_survival",
    "ipcw",
    "breslow_curve",
    "breslow_cumhaz",
    "cox_survival",
]


class StepFunction:
    """Right-continuous step function with a value before the first jump.

    ``f(s)`` returns the value attached to the last jump time <= s;
    ``f.left_limit(s)`` the value just before s (jumps strictly < s).
    """

    def __init__(self, jump_times, values, initial_value=1.0):
        self.jump_times = np.asarray(jump_times, dtype=float)
        self.values = np.asarray(values, dtype=float)
        if self.jump_times.ndim != 1 or self.jump_times.shape != self.values.shape:
            raise DomainError("jump_times and values must be equal-length 1-d arrays")
        if self.jump_times.size > 1 and np.any(np.diff(self.jump_times) <= 0):
            raise DomainError("jump_times must be strictly increasing")
        self.initial_value = float(initial_value)
        self._lookup = np.concatenate(([self.initial_value], self.values))

    def __call__(self, s):
        pos = np.searchsorted(self.jump_times, s, side="right")
        out = self._lookup[pos]
        return float(out) if np.isscalar(s) else out

    def left_limit(self, s):
        pos = np.searchsorted(self.jump_times, s, side="left")
        out = self._lookup[pos]
        return float(out) if np.isscalar(s) else out


@dataclass(frozen=True)
class IpcwWeights:
    """Censoring weights for the risk set of one prediction window.

    ``weights`` is aligned with ``risk_indices`` (dataset subject indices
    in risk-set order).  Subjects censored inside the window carry weight
    exactly zero.
    """

    risk_indices: np.ndarray
    weights: np.ndarray
    window: PredictionWindow

    @property
    def weight_of(self) -> dict:
        return {int(i): float(w) for i, w in zip(self.risk_indices, self.weights)}

    @property
    def n_effective(self) -> int:
        return int(np.count_nonzero(self.weights))


def kaplan_meier(times, events) -> StepFunction:
    """Product-limit survival estimator with ties aggregated.

    At a tied time, events are processed before censorings: subjects
    censored at ``s`` still count as at risk for the events at ``s``.

    Returns a survival-type :class:`StepFunction` (starts at 1, jumps only
    at event times, non-increasing).
    """
    times = np.asarray(times, dtype=float)
    events = np.asarray(events, dtype=bool)
    if times.size == 0:
        raise DomainError("kaplan_meier needs at least one observation")
    if times.shape != events.shape:
        raise DomainError("times and events must have equal length")
    if np.any(times < 0) or not np.all(np.isfinite(times)):
        raise DomainError("times must be finite and >= 0")

    order = np.argsort(times, kind="stable")
    ts, evs = times[order], events[order]
    uniq, start = np.unique(ts, return_index=True)
    # at-risk count just before each unique time; deaths at each unique time
    n_at_risk = times.size - start
    d = np.add.reduceat(evs.astype(int), start)
    has_event = d > 0
    surv = np.cumprod(1.0 - d[has_event] / n_at_risk[has_event])
    return StepFunction(uniq[has_event], surv, initial_value=1.0)


def censoring_survival(data: Dataset, t: float) -> StepFunction:
    """Kaplan-Meier of the censoring distribution, refit on the risk set at ``t``.

    Event roles are reversed (indicator ``1 - event``), and only subjects
    with observed time > t enter the fit, so the curve equals 1 at and
    before the landmark by construction.
    """
    rs = risk_set(data, t)
    if rs.n == 0:
        raise DomainError(f"empty risk set at t={t}; censoring survival is undefined")
    return kaplan_meier(data.times[rs.indices], ~data.events[rs.indices])


def ipcw(data: Dataset, window: PredictionWindow) -> IpcwWeights:
    """Inverse probability of censoring weights over the risk set.

    For subject i at risk at t: an event inside ``(t, u]`` is weighted by
    ``1 / G(T_i- | t)`` (left limit, so an event tied with a censoring
    time keeps a positive weight), survival past ``u`` by ``1 / G(u | t)``,
    and censoring inside the window gives weight zero.
    """
    rs = risk_set(data, window.t)
    if rs.n == 0:
        raise DomainError(f"empty risk set at t={window.t}")
    G = censoring_survival(data, window.t)
    times = data.times[rs.indices]
    events = data.events[rs.indices]

    weights = np.zeros(rs.n, dtype=float)
    in_window = (times > window.t) & (times <= window.u) & events
    past = times > window.u

    if np.any(in_window):
        g_event = G.left_limit(times[in_window])
        if np.any(g_event <= 0):
            bad = rs.subject_ids[int(np.flatnonzero(in_window)[np.argmax(g_event <= 0)])]
            raise EstimabilityError(
                f"censoring survival is 0 just before the event time of subject {bad!r}; "
                "its weight is not estimable"
            )
        weights[in_window] = 1.0 / g_event
    if np.any(past):
        g_u = G(window.u)
        if g_u <= 0:
            bad = rs.subject_ids[int(np.flatnonzero(past)[0])]
            raise EstimabilityError(
                f"censoring survival at the horizon u={window.u} is 0 but subject {bad!r} "
                "requires a positive weight there"
            )
        weights[past] = 1.0 / g_u
    return IpcwWeights(risk_indices=rs.indices, weights=weights, window=window)


def breslow_curve(linear_predictors, times, events) -> StepFunction:
    """Breslow cumulative baseline hazard as a step function.

    Each event time contributes ``d_s / sum_{j: T_j >= s} exp(lp_j)``; the
    denominator is restricted to subjects still at risk at the event time.
    """
    lp = np.asarray(linear_predictors, dtype=float)
    times = np.asarray(times, dtype=float)
    events = np.asarray(events, dtype=bool)
    if not (lp.shape == times.shape == events.shape):
        raise DomainError("linear_predictors, times and events must be aligned")

    order = np.argsort(times, kind="stable")
    ts, evs, e_lp = times[order], events[order], np.exp(lp[order])
    # risk-set denominator just before each unique time (reverse cumulative sum)
    uniq, start = np.unique(ts, return_index=True)
    denom_all = np.concatenate((np.cumsum(e_lp[::-1])[::-1], [0.0]))
    denom = denom_all[start]
    d = np.add.reduceat(evs.astype(int), start)
    has_event = d > 0
    increments = d[has_event] / denom[has_event]
    return StepFunction(uniq[has_event], np.cumsum(increments), initial_value=0.0)


def breslow_cumhaz(linear_predictors, times, events, u, landmark: float = 0.0) -> float:
    """Cumulative baseline hazard at horizon ``u``.

    ``landmark`` is the time origin of the fit; ``u`` earlier than it is a
    domain error.  Beyond the last event time the curve is flat.
    """
    if u < landmark:
        raise DomainError(f"horizon u={u} precedes the landmark {landmark}")
    return float(breslow_curve(linear_predictors, times, events)(u))


def cox_survival(lp, H0_u):
    """Survival probability exp(-H0(u) * exp(lp)); vectorized in ``lp``."""
    H0_u = np.asarray(H0_u, dtype=float)
    if np.any(H0_u < 0):
        raise DomainError("cumulative hazard must be >= 0")
    out = np.exp(-H0_u * np.exp(np.asarray(lp, dtype=float)))
    return float(out) if out.ndim == 0 else out
