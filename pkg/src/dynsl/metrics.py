"""IPCW-weighted accuracy measures for dynamic survival predictions.

Three measures over a prediction window ``{t, u}``: the Brier score at
the horizon, its two-point Simpson approximation over the window
(integrated Brier score), and the time-varying AUC.

Two conventions are exposed where the literature is not unanimous:

* ``brier`` pairs the event indicator ``1(T_i <= u)`` with the survival
  prediction (``pairing="verbatim"``).  Under that pairing a perfectly
  calibrated survival prediction scores *worst*; the usual pairing of the
  survival indicator ``1(T_i > u)`` with the survival prediction is
  available as ``pairing="conventional"`` and is what the ensemble engine
  optimizes.
* ``tv_auc`` counts a concordant pair when the event-haver has the
  *higher* predicted survival (``orientation="verbatim"``).
  ``orientation="conventional"`` counts event-havers with the *lower*
  predicted survival, so larger is better discrimination.

Ties in the AUC score zero credit in both orientations (strict
inequality, no half-credit).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset, PredictionWindow, risk_set
from .exceptions import DomainError, EstimabilityError
from .survival import IpcwWeights

__all__ = ["MetricValue", "brier", "integrated_brier", "tv_auc", "BS", "IBS", "TV_AUC"]

BS = "BS"
IBS = "IBS"
TV_AUC = "tvAUC"


@dataclass(frozen=True)
class MetricValue:
    value: float
    kind: str
    window: PredictionWindow
    n_effective: int


def _check_alignment(preds, data: Dataset, window: PredictionWindow, w: IpcwWeights):
    preds = np.asarray(preds, dtype=float)
    rs = risk_set(data, window.t)
    if preds.shape != (rs.n,):
        raise DomainError(f"expected {rs.n} predictions for the risk set at t={window.t}, got {preds.shape}")
    if w.weights.shape != (rs.n,) or not np.array_equal(w.risk_indices, rs.indices):
        raise DomainError("IPCW weights are not aligned with the risk set of this window")
    nz = w.weights > 0
    if np.any(~np.isfinite(preds[nz])) or np.any(preds[nz] < 0) or np.any(preds[nz] > 1):
        raise DomainError("predictions must lie in [0, 1] wherever the weight is nonzero")
    return preds, rs


def brier(preds, data: Dataset, window: PredictionWindow, w: IpcwWeights, pairing: str = "verbatim") -> MetricValue:
    """Weighted Brier score at the window's horizon.

    The mean is taken over the full risk set (zero-weight subjects count
    in the denominator but their predictions are never read).
    """
    if pairing not in ("verbatim", "conventional"):
        raise DomainError(f"unknown pairing {pairing!r}")
    preds, rs = _check_alignment(preds, data, window, w)
    nz = w.weights > 0
    times = data.times[rs.indices][nz]
    if pairing == "verbatim":
        outcome = (times <= window.u).astype(float)
    else:
        outcome = (times > window.u).astype(float)
    sq = (outcome - preds[nz]) ** 2
    value = float(np.sum(w.weights[nz] * sq) / rs.n)
    return MetricValue(value=value, kind=BS, window=window, n_effective=int(nz.sum()))


def integrated_brier(
    preds_mid,
    preds_end,
    data: Dataset,
    window: PredictionWindow,
    w_mid: IpcwWeights,
    w_end: IpcwWeights,
    pairing: str = "verbatim",
) -> MetricValue:
    """Two-point Simpson approximation of the window-averaged Brier score.

    Exactly ``(2/3) * BS((t+u)/2 | t) + (1/6) * BS(u | t)``; the Brier
    score at the landmark itself is identically zero and omitted.
    ``preds_mid`` must be predictions at the midpoint horizon with
    midpoint-window weights ``w_mid``.
    """
    mid_window = PredictionWindow(window.t, window.midpoint)
    bs_mid = brier(preds_mid, data, mid_window, w_mid, pairing=pairing)
    bs_end = brier(preds_end, data, window, w_end, pairing=pairing)
    value = (2.0 / 3.0) * bs_mid.value + (1.0 / 6.0) * bs_end.value
    return MetricValue(value=value, kind=IBS, window=window, n_effective=bs_end.n_effective)


def tv_auc(preds, data: Dataset, window: PredictionWindow, w: IpcwWeights, orientation: str = "verbatim") -> MetricValue:
    """Time-varying AUC over the window: weighted fraction of correctly
    ordered (event-haver, comparator) pairs, strict inequality.

    Cases are in-window event-havers; comparators everyone else at risk.
    Raises :class:`EstimabilityError` when no weighted case/comparator
    pair exists.
    """
    if orientation not in ("verbatim", "conventional"):
        raise DomainError(f"unknown orientation {orientation!r}")
    preds, rs = _check_alignment(preds, data, window, w)
    times = data.times[rs.indices]
    events = data.events[rs.indices]
    d = (times > window.t) & (times <= window.u) & events

    case = d & (w.weights > 0)
    ctrl = ~d & (w.weights > 0)
    w_case, p_case = w.weights[case], preds[case]
    w_ctrl, p_ctrl = w.weights[ctrl], preds[ctrl]
    denominator = w_case.sum() * w_ctrl.sum()
    if denominator <= 0:
        raise EstimabilityError(
            f"no usable case/comparator pairs in window ({window.t}, {window.u}]; tv-AUC is not estimable"
        )

    order = np.argsort(p_ctrl, kind="stable")
    p_sorted = p_ctrl[order]
    cum_w = np.concatenate(([0.0], np.cumsum(w_ctrl[order])))
    if orientation == "verbatim":
        # comparator weight strictly below each case's prediction
        below = np.searchsorted(p_sorted, p_case, side="left")
        numerator = float(np.sum(w_case * cum_w[below]))
    else:
        above = np.searchsorted(p_sorted, p_case, side="right")
        numerator = float(np.sum(w_case * (cum_w[-1] - cum_w[above])))
    n_eff = int(np.count_nonzero(w.weights))
    return MetricValue(value=numerator / denominator, kind=TV_AUC, window=window, n_effective=n_eff)
