"""Linear mixed models for biomarker trajectories.

Maximum-likelihood fitting of

    y_ij = x(t_ij)' beta + z(t_ij)' b_i + e_ij,
    b_i ~ N(0, D),  e_ij ~ N(0, sigma^2),

with a random intercept + slope (or intercept only), and a fixed-effect
time trend that is constant, linear, or a natural cubic spline.  The
marginal likelihood is maximized over an unconstrained log-Cholesky
parameterization of ``D`` plus ``log sigma^2`` by a restarted
Nelder-Mead search; ``beta`` is profiled out by generalized least
squares at every step.  Subject-level random effects are recovered with
the closed-form Gaussian posterior mean (BLUP).

All heavy lifting runs on per-subject sufficient statistics, so one
likelihood evaluation is a handful of batched 2x2 operations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .data import Dataset
from .exceptions import DomainError, FitError, NumericalError
from .splines import NaturalCubicBasis, basis_from_times

__all__ = ["LmmFit", "fit_lmm", "blup", "predict_eta", "marginal_log_likelihood"]

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class LmmFit:
    """Converged mixed-model state for one biomarker."""

    biomarker: str
    fixed_effects: np.ndarray
    re_covariance: np.ndarray
    residual_variance: float
    trajectory: str  # constant | linear | spline
    basis: NaturalCubicBasis | None
    random_effects: str  # intercept | intercept_slope
    log_likelihood: float
    converged: bool
    n_iterations: int

    @property
    def n_random(self) -> int:
        return 2 if self.random_effects == "intercept_slope" else 1

    def x_design(self, times) -> np.ndarray:
        return _x_design(np.atleast_1d(np.asarray(times, dtype=float)), self.trajectory, self.basis)

    def z_design(self, times) -> np.ndarray:
        return _z_design(np.atleast_1d(np.asarray(times, dtype=float)), self.random_effects)


def _x_design(times, trajectory, basis):
    ones = np.ones((times.size, 1))
    if trajectory == "constant":
        return ones
    if trajectory == "linear":
        return np.hstack([ones, times[:, None]])
    if trajectory == "spline":
        return np.hstack([ones, basis.design(times)])
    raise DomainError(f"unknown trajectory {trajectory!r}")


def _z_design(times, random_effects):
    ones = np.ones((times.size, 1))
    if random_effects == "intercept":
        return ones
    if random_effects == "intercept_slope":
        return np.hstack([ones, times[:, None]])
    raise DomainError(f"unknown random-effects structure {random_effects!r}")


def _batched_inv_logdet(B):
    """Inverse and log-determinant of a stack of SPD 1x1 or 2x2 matrices."""
    q = B.shape[-1]
    if q == 1:
        det = B[:, 0, 0]
        if np.any(det <= 0):
            raise NumericalError("singular 1x1 marginal block")
        return (1.0 / det)[:, None, None], np.log(det)
    a, b, c = B[:, 0, 0], B[:, 0, 1], B[:, 1, 1]
    det = a * c - b * b
    if np.any(det <= 0) or np.any(a <= 0):
        raise NumericalError("singular 2x2 marginal block")
    inv = np.empty_like(B)
    inv[:, 0, 0] = c / det
    inv[:, 1, 1] = a / det
    inv[:, 0, 1] = inv[:, 1, 0] = -b / det
    return inv, np.log(det)


class _SuffStats:
    """Per-subject cross-products; everything a likelihood evaluation needs."""

    def __init__(self, X_list, Z_list, y_list):
        self.n_subjects = len(y_list)
        self.k = np.array([len(y) for y in y_list], dtype=float)
        self.total_obs = int(self.k.sum())
        self.ZtZ = np.stack([Z.T @ Z for Z in Z_list])
        self.ZtX = np.stack([Z.T @ X for X, Z in zip(X_list, Z_list)])
        self.Zty = np.stack([Z.T @ y for Z, y in zip(Z_list, y_list)])
        self.XtX = sum(X.T @ X for X in X_list)
        self.Xty = sum(X.T @ y for X, y in zip(X_list, y_list))
        self.yty = float(sum(y @ y for y in y_list))
        self.p = self.XtX.shape[0]
        self.q = self.ZtZ.shape[-1]

    def profile_beta(self, Dinv, sigma2):
        """GLS beta and the likelihood pieces, given covariance parameters."""
        M, logdet_inner = _batched_inv_logdet(Dinv[None, :, :] + self.ZtZ / sigma2)
        # A = X' V^-1 X, rhs = X' V^-1 y, via Woodbury
        MZtX = M @ self.ZtX
        A = self.XtX / sigma2 - np.einsum("nqp,nqr->pr", self.ZtX, MZtX) / sigma2**2
        rhs = self.Xty / sigma2 - np.einsum("nqp,nq->p", MZtX, self.Zty) / sigma2**2
        try:
            beta = np.linalg.solve(A, rhs)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"normal equations are singular: {exc}") from exc
        return beta, M, logdet_inner

    def loglik(self, beta, M, logdet_inner, logdet_D, sigma2):
        w = self.Zty - self.ZtX @ beta  # Z_i' r_i
        rtr = self.yty - 2.0 * beta @ self.Xty + beta @ self.XtX @ beta
        quad = rtr / sigma2 - float(np.einsum("nq,nqr,nr->", w, M, w)) / sigma2**2
        logdet_V = self.total_obs * np.log(sigma2) + self.n_subjects * logdet_D + float(logdet_inner.sum())
        return -0.5 * (self.total_obs * _LOG_2PI + logdet_V + quad)


def _theta_to_cov(theta, q):
    """Log-Cholesky + log-variance vector -> (D, D^-1, logdet D, sigma2)."""
    if q == 1:
        l11 = np.exp(theta[0])
        D = np.array([[l11 * l11]])
        Dinv = np.array([[1.0 / (l11 * l11)]])
        logdet = 2.0 * theta[0]
        sigma2 = np.exp(theta[1])
    else:
        l11, l21, l22 = np.exp(theta[0]), theta[1], np.exp(theta[2])
        L = np.array([[l11, 0.0], [l21, l22]])
        D = L @ L.T
        Linv = np.array([[1.0 / l11, 0.0], [-l21 / (l11 * l22), 1.0 / l22]])
        Dinv = Linv.T @ Linv
        logdet = 2.0 * (theta[0] + theta[2])
        sigma2 = np.exp(theta[3])
    return D, Dinv, logdet, float(sigma2)


def _collect_design(data: Dataset, biomarker: str, trajectory, df, random_effects, truncate_time, subject_indices):
    if biomarker not in data.biomarker_names:
        raise DomainError(f"unknown biomarker {biomarker!r}")
    m = data.biomarker_names.index(biomarker)
    idx = range(data.n) if subject_indices is None else subject_indices
    histories = []
    for i in idx:
        t, v = data.history(i, m, t_max=truncate_time)
        if len(t):
            histories.append((t, v))
    if len(histories) < 2:
        raise DomainError(
            f"need measurements from at least 2 subjects to fit biomarker {biomarker!r}, got {len(histories)}"
        )
    all_times = np.concatenate([t for t, _ in histories])
    basis = basis_from_times(all_times, df) if trajectory == "spline" else None
    X_list = [_x_design(t, trajectory, basis) for t, _ in histories]
    Z_list = [_z_design(t, random_effects) for t, _ in histories]
    y_list = [v for _, v in histories]
    return _SuffStats(X_list, Z_list, y_list), basis, all_times


def _initial_theta(stats: _SuffStats, all_times, q):
    beta0 = np.linalg.solve(stats.XtX + 1e-10 * np.eye(stats.p), stats.Xty)
    resid_var = max((stats.yty - 2 * beta0 @ stats.Xty + beta0 @ stats.XtX @ beta0) / stats.total_obs, 1e-8)
    t_scale = max(float(np.std(all_times)), 1e-3)
    if q == 1:
        return np.array([0.5 * np.log(resid_var / 2.0), np.log(resid_var / 2.0)])
    return np.array(
        [0.5 * np.log(resid_var / 2.0), 0.0, 0.5 * np.log(resid_var / 2.0) - np.log(2.0 * t_scale), np.log(resid_var / 2.0)]
    )


def _fd_newton_polish(objective, theta, f0, rounds: int = 4, h_grad: float = 1e-5, h_hess: float = 1e-3):
    """Damped Newton steps from central-difference gradient and Hessian.

    The gradient step is small (truncation error matters near the
    optimum); the Hessian step larger (its error only perturbs the step
    direction).  Steps below the function-noise scale are accepted
    without a strict improvement check.
    """
    d = theta.size
    for _ in range(rounds):
        g = np.empty(d)
        H = np.empty((d, d))
        for j in range(d):
            e = np.zeros(d)
            e[j] = h_grad
            g[j] = (objective(theta + e) - objective(theta - e)) / (2 * h_grad)
            e[j] = h_hess
            H[j, j] = (objective(theta + e) - 2 * f0 + objective(theta - e)) / h_hess**2
        for j in range(d):
            for k in range(j + 1, d):
                ej, ek = np.zeros(d), np.zeros(d)
                ej[j], ek[k] = h_hess, h_hess
                H[j, k] = H[k, j] = (
                    objective(theta + ej + ek)
                    - objective(theta + ej - ek)
                    - objective(theta - ej + ek)
                    + objective(theta - ej - ek)
                ) / (4 * h_hess**2)
        if not (np.all(np.isfinite(g)) and np.all(np.isfinite(H))):
            break
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            break
        if not np.all(np.isfinite(step)):
            break
        noise = 64.0 * np.finfo(float).eps * max(abs(f0), 1.0)
        if np.linalg.norm(step) < 1e-5:
            f_try = objective(theta - step)
            if f_try <= f0 + noise:
                theta, f0 = theta - step, min(f0, f_try)
            break
        improved = False
        for damp in (1.0, 0.5, 0.25, 0.1):
            f_try = objective(theta - damp * step)
            if f_try < f0:
                theta, f0 = theta - damp * step, f_try
                improved = True
                break
        if not improved:
            break
    return theta, f0


def fit_lmm(
    data: Dataset,
    biomarker: str,
    trajectory: str = "linear",
    df: int = 3,
    random_effects: str = "intercept_slope",
    truncate_time: float | None = None,
    subject_indices=None,
    max_iterations: int = 2000,
    tol: float = 1e-8,
) -> LmmFit:
    """Maximum-likelihood mixed-model fit for one biomarker.

    ``truncate_time`` drops measurements after the given time (used by
    two-stage landmarking to avoid look-ahead); ``subject_indices``
    restricts the fit to a training subset.  Raises :class:`FitError`
    with the best-so-far state when the iteration cap is hit before the
    log-likelihood stabilizes.
    """
    stats, basis, all_times = _collect_design(
        data, biomarker, trajectory, df, random_effects, truncate_time, subject_indices
    )
    q = stats.q

    def objective(theta):
        if np.any(np.abs(theta) > 44.0):  # exp over/underflow guard
            return np.inf
        try:
            D, Dinv, logdet_D, sigma2 = _theta_to_cov(theta, q)
            beta, M, logdet_inner = stats.profile_beta(Dinv, sigma2)
            return -stats.loglik(beta, M, logdet_inner, logdet_D, sigma2)
        except NumericalError:
            return np.inf

    # Nelder-Mead restarted with a fresh simplex until two successive runs
    # agree to `tol`; a collapsed simplex with stale vertex values otherwise
    # burns the whole iteration budget without terminating.  A short
    # finite-difference Newton polish then removes the residual gradient
    # the simplex search cannot (still no analytic derivative code).
    theta = _initial_theta(stats, all_times, q)
    best = np.inf
    used = 0
    converged = False
    while used < max_iterations:
        res = minimize(
            objective,
            theta,
            method="Nelder-Mead",
            options={"maxiter": min(700, max_iterations - used), "fatol": 1e-10, "xatol": 1e-7},
        )
        used += res.nit
        improved = best - res.fun
        if res.fun <= best:
            theta, best = res.x, res.fun
        if improved < tol and np.isfinite(best):
            converged = True
            break
    if converged:
        theta, best = _fd_newton_polish(objective, theta, best)

    if not np.isfinite(best):
        raise NumericalError(f"marginal likelihood for biomarker {biomarker!r} is degenerate")

    D, Dinv, logdet_D, sigma2 = _theta_to_cov(theta, q)
    beta, M, logdet_inner = stats.profile_beta(Dinv, sigma2)
    fit = LmmFit(
        biomarker=biomarker,
        fixed_effects=beta,
        re_covariance=D,
        residual_variance=sigma2,
        trajectory=trajectory,
        basis=basis,
        random_effects=random_effects,
        log_likelihood=float(-best),
        converged=converged,
        n_iterations=used,
    )
    if not converged:
        raise FitError(
            f"mixed model for biomarker {biomarker!r} did not stabilize within {max_iterations} iterations",
            diagnostics={"best_fit": fit, "negative_log_likelihood": float(best)},
        )
    return fit


def marginal_log_likelihood(
    data: Dataset,
    biomarker: str,
    fixed_effects,
    re_covariance,
    residual_variance: float,
    trajectory: str = "linear",
    df: int = 3,
    random_effects: str = "intercept_slope",
    truncate_time: float | None = None,
    subject_indices=None,
) -> float:
    """Exact marginal Gaussian log-likelihood at user-supplied parameters."""
    stats, _, _ = _collect_design(data, biomarker, trajectory, df, random_effects, truncate_time, subject_indices)
    D = np.atleast_2d(np.asarray(re_covariance, dtype=float))
    sign, logdet_D = np.linalg.slogdet(D)
    if sign <= 0:
        raise DomainError("re_covariance must be positive definite")
    Dinv = np.linalg.inv(D)
    M, logdet_inner = _batched_inv_logdet(Dinv[None, :, :] + stats.ZtZ / residual_variance)
    return stats.loglik(np.asarray(fixed_effects, dtype=float), M, logdet_inner, logdet_D, residual_variance)


def blup(fit: LmmFit, times, values) -> np.ndarray:
    """Posterior mean of one subject's random effects given its history.

    Empty history returns the prior mean (zeros).
    """
    times = np.atleast_1d(np.asarray(times, dtype=float))
    values = np.atleast_1d(np.asarray(values, dtype=float))
    if times.size == 0:
        return np.zeros(fit.n_random)
    Z = fit.z_design(times)
    X = fit.x_design(times)
    r = values - X @ fit.fixed_effects
    Dinv = np.linalg.inv(fit.re_covariance)
    M = np.linalg.inv(Dinv + Z.T @ Z / fit.residual_variance)
    return M @ (Z.T @ r) / fit.residual_variance


def predict_eta(fit: LmmFit, b, t):
    """Subject-level expected trajectory x(t)' beta + z(t)' b; vectorized in ``t``."""
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    out = fit.x_design(t_arr) @ fit.fixed_effects + fit.z_design(t_arr) @ np.asarray(b, dtype=float)
    return float(out[0]) if np.isscalar(t) or np.asarray(t).ndim == 0 else out
