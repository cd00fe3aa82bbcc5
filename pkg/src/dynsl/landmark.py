"""Landmark Cox learners: feature construction at the landmark and
partial-likelihood fitting on the risk set.

One-stage features carry the last biomarker value observed at or before
the landmark forward (LVCF); two-stage features replace it with the
mixed-model estimate of the latent trajectory at the landmark, fitted
only on pre-landmark measurements.  Subjects with no usable measurement
for some biomarker receive the risk-set median plus a missingness
indicator column, so every at-risk subject stays predictable.

The Cox fit maximizes the Breslow partial log-likelihood by
Newton-Raphson with step-halving, with the landmark as time zero.
Predictions go through the Breslow cumulative baseline hazard of the
training risk set.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, PredictionWindow, risk_set
from .exceptions import DomainError, FitError
from .lmm import LmmFit, blup, fit_lmm, predict_eta
from .survival import StepFunction, breslow_curve, cox_survival

__all__ = ["LandmarkFeatures", "CoxFit", "lvcf_features", "two_stage_features", "fit_cox", "predict_landmark"]


@dataclass(frozen=True)
class LandmarkFeatures:
    """Design matrix over the risk set at one landmark time."""

    design: np.ndarray
    feature_names: tuple
    landmark: float
    stage: str  # one_stage | two_stage
    risk_indices: np.ndarray
    medians: dict = field(default_factory=dict)  # biomarker -> imputation value
    indicator_biomarkers: tuple = ()
    lmm_fits: tuple = ()  # two-stage only

    def __post_init__(self):
        if self.design.shape[0] != len(self.risk_indices):
            raise DomainError("one design row per risk-set subject required")
        if self.design.shape[1] != len(self.feature_names):
            raise DomainError("feature_names must match design columns")
        if self.design.size and not np.all(np.isfinite(self.design)):
            raise DomainError("landmark design contains non-finite entries after imputation")


def _baseline_block(data: Dataset, idx: np.ndarray) -> np.ndarray:
    block = data.baseline_matrix[idx]
    if block.size and not np.all(np.isfinite(block)):
        bad = np.flatnonzero(~np.all(np.isfinite(block), axis=1))[0]
        raise DomainError(
            f"subject {data.subject_ids[idx[bad]]!r} has a non-finite baseline covariate; "
            "impute or drop it before landmarking"
        )
    return block


def _assemble(data, t, stage, biom_columns, missing_flags, medians, indicator_biomarkers, lmm_fits, rs):
    """Stack baseline covariates, biomarker features, and indicator columns."""
    names = list(data.baseline_names)
    cols = [_baseline_block(data, rs.indices)]
    for m, biom in enumerate(data.biomarker_names):
        cols.append(biom_columns[m][:, None])
        names.append(biom)
    for biom in indicator_biomarkers:
        m = data.biomarker_names.index(biom)
        cols.append(missing_flags[m][:, None].astype(float))
        names.append(f"{biom}_missing")
    return LandmarkFeatures(
        design=np.hstack(cols),
        feature_names=tuple(names),
        landmark=float(t),
        stage=stage,
        risk_indices=rs.indices,
        medians=dict(medians),
        indicator_biomarkers=tuple(indicator_biomarkers),
        lmm_fits=tuple(lmm_fits),
    )


def lvcf_features(data: Dataset, t: float, template: LandmarkFeatures | None = None) -> LandmarkFeatures:
    """One-stage landmark features: last value at or before ``t`` per biomarker.

    ``template`` (a training LandmarkFeatures) freezes the imputation
    medians and the set of indicator columns so new data gets the exact
    training schema.
    """
    rs = risk_set(data, t)
    biom_columns, missing_flags = [], []
    for m in range(data.n_biomarkers):
        vals = np.array(
            [np.nan if (v := data.last_value_at(i, m, t)) is None else v for i in rs.indices], dtype=float
        )
        missing_flags.append(np.isnan(vals))
        biom_columns.append(vals)

    if template is None:
        medians = {}
        indicator = []
        for m, biom in enumerate(data.biomarker_names):
            observed = biom_columns[m][~missing_flags[m]]
            if missing_flags[m].any():
                if observed.size == 0:
                    raise DomainError(f"no subject in the risk set has a measurement of {biom!r} by t={t}")
                medians[biom] = float(np.median(observed))
                indicator.append(biom)
            else:
                medians[biom] = float(np.median(observed)) if observed.size else 0.0
    else:
        medians = template.medians
        indicator = list(template.indicator_biomarkers)

    for m, biom in enumerate(data.biomarker_names):
        biom_columns[m] = np.where(missing_flags[m], medians[biom], biom_columns[m])
    return _assemble(data, t, "one_stage", biom_columns, missing_flags, medians, indicator, (), rs)


def two_stage_features(
    data: Dataset,
    t: float,
    trajectory: str = "linear",
    df: int = 3,
    template: LandmarkFeatures | None = None,
    training_subjects=None,
) -> LandmarkFeatures:
    """Two-stage landmark features: mixed-model trajectory estimate at ``t``.

    Mixed models are fit per biomarker on measurements up to ``t`` only
    (no look-ahead), over ``training_subjects`` if given, then each
    at-risk subject's random effects are recovered from its own
    pre-landmark history.  With ``template``, the training LMM fits are
    reused instead of refit.
    """
    rs = risk_set(data, t)
    if template is not None:
        fits = template.lmm_fits
    else:
        fits = tuple(
            fit_lmm(
                data,
                biom,
                trajectory=trajectory,
                df=df,
                truncate_time=t,
                subject_indices=training_subjects,
            )
            for biom in data.biomarker_names
        )
    biom_columns = []
    for m, fit in enumerate(fits):
        col = np.empty(rs.n)
        for row, i in enumerate(rs.indices):
            times, values = data.history(i, m, t_max=t)
            col[row] = predict_eta(fit, blup(fit, times, values), t)
        biom_columns.append(col)
    no_missing = [np.zeros(rs.n, dtype=bool)] * data.n_biomarkers
    return _assemble(data, t, "two_stage", biom_columns, no_missing, {}, (), fits, rs)


@dataclass(frozen=True)
class CoxFit:
    """Converged Cox partial-likelihood state at one landmark."""

    coefficients: np.ndarray
    feature_names: tuple
    information: np.ndarray
    log_partial_likelihood: float
    converged: bool
    landmark: float
    center: np.ndarray
    dropped_constant: tuple
    baseline_cumhaz: StepFunction
    n_iterations: int

    def linear_predictor(self, design: np.ndarray) -> np.ndarray:
        return (design - self.center) @ self.coefficients


def _partial_loglik_score_info(beta, X, times, events, want_derivs=True):
    """Breslow-ties partial log-likelihood and derivatives, via reverse cumulative sums."""
    lp = X @ beta
    order = np.argsort(times, kind="stable")
    ts, evs = times[order], events[order]
    Xs, lps = X[order], lp[order]
    w = np.exp(lps)
    # reverse cumulative risk sums, aligned to first index of each tie group
    uniq, start = np.unique(ts, return_index=True)
    group = np.searchsorted(uniq, ts)
    S0 = np.cumsum(w[::-1])[::-1]
    S0_at = S0[start][group]
    ll = float(np.sum((lps - np.log(S0_at))[evs]))
    if not want_derivs:
        return ll, None, None
    S1 = np.cumsum((w[:, None] * Xs)[::-1], axis=0)[::-1]
    S1_at = S1[start][group]
    xbar = S1_at / S0_at[:, None]
    score = np.sum((Xs - xbar)[evs], axis=0)
    p = X.shape[1]
    S2 = np.cumsum((w[:, None, None] * (Xs[:, :, None] * Xs[:, None, :]))[::-1], axis=0)[::-1]
    S2_at = S2[start][group]
    info = np.zeros((p, p))
    ev_idx = np.flatnonzero(evs)
    info = np.einsum("ijk->jk", S2_at[ev_idx] / S0_at[ev_idx, None, None]) - np.einsum(
        "ij,ik->jk", xbar[ev_idx], xbar[ev_idx]
    )
    return ll, score, info


def fit_cox(
    features: LandmarkFeatures,
    data: Dataset,
    max_iterations: int = 50,
    max_halvings: int = 20,
    score_tol: float = 1e-6,
) -> CoxFit:
    """Newton-Raphson Cox fit on the landmark risk set (Breslow ties).

    Constant columns are dropped (their coefficients reported as zero);
    remaining rank deficiency raises :class:`FitError` naming the
    dependent columns, as does a monotone likelihood (separation).
    """
    idx = features.risk_indices
    times = data.times[idx]
    events = data.events[idx]
    if not events.any():
        raise FitError(f"no events after t={features.landmark}; Cox fit is undefined")
    X_full = features.design
    p_full = X_full.shape[1]

    sd = X_full.std(axis=0)
    keep = sd > 0
    dropped = tuple(n for n, k in zip(features.feature_names, keep) if not k)
    X = X_full[:, keep]
    center_kept = X.mean(axis=0)
    scale_kept = X.std(axis=0)
    Xs = (X - center_kept) / scale_kept

    # name columns that are linear combinations of earlier ones
    if Xs.shape[1]:
        r = np.linalg.matrix_rank(Xs)
        if r < Xs.shape[1]:
            _, rdiag = np.linalg.qr(Xs)
            dep = np.flatnonzero(np.abs(np.diag(rdiag)) < 1e-10 * max(1.0, np.abs(rdiag).max()))
            kept_names = [n for n, k in zip(features.feature_names, keep) if k]
            names = tuple(kept_names[j] for j in dep) or tuple(kept_names)
            raise FitError(f"design is rank deficient; dependent column(s): {', '.join(names)}")

    beta = np.zeros(Xs.shape[1])
    ll, score, info = _partial_loglik_score_info(beta, Xs, times, events)
    converged = False
    n_iter = 0
    for n_iter in range(1, max_iterations + 1):
        try:
            step = np.linalg.solve(info, score)
        except np.linalg.LinAlgError as exc:
            raise FitError(f"singular information matrix at iteration {n_iter}: {exc}") from exc
        accepted = False
        for h in range(max_halvings + 1):
            cand = beta + step / (2**h)
            ll_new, score_new, info_new = _partial_loglik_score_info(cand, Xs, times, events)
            if np.isfinite(ll_new) and ll_new >= ll - 1e-12:
                beta, ll, score, info = cand, ll_new, score_new, info_new
                accepted = True
                break
        if not accepted:
            break
        if np.max(np.abs(beta)) > 200.0:
            raise FitError(
                "monotone partial likelihood (separation): coefficients diverge on standardized features",
                diagnostics={"beta_standardized": beta.copy(), "log_partial_likelihood": ll},
            )
        if np.max(np.abs(score)) < score_tol:
            converged = True
            break
    if not converged:
        raise FitError(
            f"Cox fit did not converge in {max_iterations} iterations (max |score| = {np.max(np.abs(score)):.2e})",
            diagnostics={"beta_standardized": beta.copy(), "log_partial_likelihood": ll},
        )

    # back to the original scale; dropped-constant columns get coefficient 0
    coef = np.zeros(p_full)
    coef[keep] = beta / scale_kept
    info_full = np.zeros((p_full, p_full))
    S = np.diag(1.0 / scale_kept)
    info_full[np.ix_(keep, keep)] = S @ info @ S
    center = np.zeros(p_full)
    center[keep] = center_kept

    lp_train = (X_full - center) @ coef
    H0 = breslow_curve(lp_train, times, events)
    return CoxFit(
        coefficients=coef,
        feature_names=features.feature_names,
        information=info_full,
        log_partial_likelihood=float(ll),
        converged=True,
        landmark=features.landmark,
        center=center,
        dropped_constant=dropped,
        baseline_cumhaz=H0,
        n_iterations=n_iter,
    )


def predict_landmark(fit: CoxFit, features_newdata: LandmarkFeatures, window: PredictionWindow) -> np.ndarray:
    """Dynamic survival probabilities at the window horizon for new at-risk subjects.

    The cumulative baseline hazard comes from the training risk set and
    is flat beyond its last event time, so late horizons stay defined.
    """
    if features_newdata.feature_names != fit.feature_names:
        raise DomainError(
            f"feature schema mismatch: fit has {fit.feature_names}, new data has {features_newdata.feature_names}"
        )
    if window.t != fit.landmark:
        raise DomainError(f"fit landmark {fit.landmark} does not match window start {window.t}")
    lp = fit.linear_predictor(features_newdata.design)
    H0_u = fit.baseline_cumhaz(window.u)
    return cox_survival(lp, H0_u)
