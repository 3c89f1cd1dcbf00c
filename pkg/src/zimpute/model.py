"""Mixture imputation model fitted on respondents.

Three pieces: a logistic model for the probability that the variable is
nonzero (fit by Newton-Raphson on the omega-weighted estimating equation),
an eigenvalue-regularized weighted regression coefficient (clamping the Gram
matrix spectrum from below guarantees invertibility with an explicit bound
on the inverse), and the standardized-residual donor pool built from
respondents with nonzero values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .frames import SampleFrame

__all__ = [
    "ConvergenceError",
    "SeparationError",
    "PoolError",
    "PhiModel",
    "RegularizedFit",
    "ResidualPool",
    "EigenClampSolver",
    "weighted_logistic_fit",
    "fit_phi",
    "fit_regression",
    "build_residual_pool",
]

# Eigenvalues below this are treated as exact zeros before clamping.
EIGEN_ZERO = 1e-12
# expit is strictly inside (0, 1) for |lp| <= 36 in double precision.
_LP_CAP = 36.0


class ConvergenceError(RuntimeError):
    """Iterative fit failed to converge."""


class SeparationError(ConvergenceError):
    """Logistic fit detected (quasi-)separation: coefficients diverge."""


class PoolError(ValueError):
    """Donor pool is empty or otherwise unusable."""


def _loglik(u, yb, w, gamma):
    lp = u @ gamma
    # log(1 + exp(lp)) computed stably
    return float(np.sum(w * (yb * lp - np.logaddexp(0.0, lp))))


def weighted_logistic_fit(u, outcome, weights, *, tol=1e-8, max_iter=50,
                          coef_cap=100.0):
    """Solve sum_i w_i u_i (outcome_i - expit(u_i' gamma)) = 0 by Newton-Raphson.

    Starts at gamma = 0 with step halving whenever the weighted log-likelihood
    would decrease. Returns ``(gamma, n_iterations)``. Raises
    :class:`SeparationError` when the coefficient sup-norm passes ``coef_cap``
    (the telltale of separated data) and :class:`ConvergenceError` when the
    score norm has not reached ``tol`` after ``max_iter`` iterations.
    """
    u = np.asarray(u, dtype=np.float64)
    yb = np.asarray(outcome, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    q = u.shape[1]
    gamma = np.zeros(q)
    ll = _loglik(u, yb, w, gamma)
    for it in range(1, max_iter + 1):
        lp = u @ gamma
        phi = expit(lp)
        score = u.T @ (w * (yb - phi))
        if float(np.linalg.norm(score)) <= tol:
            # a saturated score is numerically zero under perfect separation;
            # a perfectly classified fit is not a converged interior optimum
            if float(np.max(np.abs(yb - phi))) < 1e-6:
                raise SeparationError(
                    "separation detected in logistic fit: outcomes perfectly classified"
                )
            return gamma, it - 1
        wgt = w * phi * (1.0 - phi)
        hess = u.T @ (u * wgt[:, None])
        try:
            step = np.linalg.solve(hess, score)
        except np.linalg.LinAlgError as exc:
            raise ConvergenceError(f"singular Hessian in logistic fit: {exc}") from exc
        # step halving keeps the likelihood monotone
        scale = 1.0
        for _ in range(40):
            cand = gamma + scale * step
            ll_new = _loglik(u, yb, w, cand)
            if ll_new >= ll - 1e-12:
                break
            scale *= 0.5
        gamma = gamma + scale * step
        ll = _loglik(u, yb, w, gamma)
        if float(np.max(np.abs(gamma))) > coef_cap:
            raise SeparationError(
                "separation detected in logistic fit: coefficient norm "
                f"exceeded {coef_cap:g}"
            )
    raise ConvergenceError(f"logistic fit did not converge in {max_iter} iterations")


@dataclass(frozen=True)
class PhiModel:
    """Fitted nonzero-probability model: coefficients and per-unit probabilities."""

    gamma_hat: np.ndarray
    phi_hat: np.ndarray
    converged: bool
    iterations: int


def fit_phi(sample: SampleFrame, *, tol=1e-8, max_iter=50, coef_cap=100.0) -> PhiModel:
    """Fit the nonzero-probability logistic on respondents, predict everywhere.

    The estimating equation runs over responding units with the sample's
    imputation weights; probabilities are then evaluated for every sampled
    unit (respondent or not), clipped strictly inside (0, 1).
    """
    resp = sample.r == 1
    if not np.any(resp):
        raise ConvergenceError("no responding units to fit the nonzero model on")
    u_r = sample.u[resp]
    eta_r = np.nan_to_num(sample.eta[resp])
    w_r = sample.omega[resp]
    gamma, iters = weighted_logistic_fit(u_r, eta_r, w_r, tol=tol,
                                         max_iter=max_iter, coef_cap=coef_cap)
    lp = np.clip(sample.u @ gamma, -_LP_CAP, _LP_CAP)
    return PhiModel(gamma_hat=gamma, phi_hat=expit(lp), converged=True,
                    iterations=iters)


class EigenClampSolver:
    """Symmetric solve with the spectrum clamped from below at ``threshold``.

    Eigenvalues below EIGEN_ZERO are zeroed first (roundoff negatives on a
    PSD Gram matrix), then raised to the threshold, which bounds the spectral
    norm of the applied inverse by 1/threshold.
    """

    def __init__(self, matrix: np.ndarray, threshold: float, *, name="matrix"):
        if threshold <= 0.0:
            raise ValueError(f"clamp threshold for {name} must be positive")
        sym = 0.5 * (matrix + matrix.T)
        vals, vecs = np.linalg.eigh(sym)
        vals = vals.copy()
        vals[vals < EIGEN_ZERO] = 0.0
        self.name = name
        self.threshold = float(threshold)
        self.eigenvalues = vals
        self.eigenvectors = vecs
        self.clamped = np.maximum(vals, threshold)
        self.active = bool(np.any(vals < threshold))
        if np.any(self.clamped <= 0.0):
            raise ConvergenceError(f"singular {name} after clamping")

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return self.eigenvectors @ ((self.eigenvectors.T @ rhs) / self.clamped)

    def matrix(self) -> np.ndarray:
        return (self.eigenvectors * self.clamped) @ self.eigenvectors.T


@dataclass(frozen=True)
class RegularizedFit:
    """Weighted regression with an eigenvalue-clamped Gram matrix.

    ``g_hat`` is the raw Gram matrix (population-size normalized), ``g_reg``
    its clamped version (equal to ``g_hat`` when no eigenvalue fell below the
    threshold), ``beta_hat`` the coefficient solved against ``g_reg``.
    """

    g_hat: np.ndarray
    g_reg: np.ndarray
    beta_hat: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    threshold: float
    regularization_active: bool
    _solver: EigenClampSolver

    def solve_regularized(self, rhs: np.ndarray) -> np.ndarray:
        """Apply the clamped inverse of the Gram matrix to ``rhs``."""
        return self._solver.solve(rhs)


def fit_regression(sample: SampleFrame, phi: PhiModel, threshold: float = 0.05) -> RegularizedFit:
    """Estimate the regression coefficient of the nonzero branch.

    Gram matrix: mean over the population size of
    omega_i r_i phi_i z_i z_i' / v_i; response moment: same with z_i y_i and
    no phi factor. The clamp makes the solve well defined even with a
    degenerate respondent set.
    """
    N = sample.parent.n_units
    rw = sample.omega * (sample.r == 1)
    zv = sample.z / sample.v[:, None]
    g_hat = (sample.z.T @ (zv * (rw * phi.phi_hat)[:, None])) / N
    t_hat = (zv * (rw * sample.y_observed())[:, None]).sum(axis=0) / N
    solver = EigenClampSolver(g_hat, threshold, name="regression Gram matrix")
    beta = solver.solve(t_hat)
    g_reg = g_hat if not solver.active else solver.matrix()
    return RegularizedFit(
        g_hat=g_hat,
        g_reg=g_reg,
        beta_hat=beta,
        eigenvalues=solver.eigenvalues[::-1].copy(),  # descending
        eigenvectors=solver.eigenvectors[:, ::-1].copy(),
        threshold=float(threshold),
        regularization_active=solver.active,
        _solver=solver,
    )


@dataclass(frozen=True)
class ResidualPool:
    """Standardized residuals of respondents with nonzero values.

    ``donor_idx`` are sample positions; ``probs`` the normalized imputation
    weights over the pool; ``mean``/``var`` the weighted first two moments of
    the residuals.
    """

    donor_idx: np.ndarray
    residuals: np.ndarray
    probs: np.ndarray
    mean: float
    var: float


def build_residual_pool(sample: SampleFrame, fit: RegularizedFit) -> ResidualPool:
    """Collect donors (respondents with nonzero value) and their residuals."""
    eta = sample.eta_filled()
    donors = np.flatnonzero((sample.r == 1) & (eta == 1.0))
    if donors.size == 0:
        raise PoolError("empty donor pool: no responding unit with a nonzero value")
    pred = sample.z[donors] @ fit.beta_hat
    e = (sample.y[donors] - pred) / np.sqrt(sample.v[donors])
    w = sample.omega[donors]
    probs = w / float(w.sum())
    mean = float(np.sum(probs * e))
    var = float(np.sum(probs * (e - mean) ** 2))
    return ResidualPool(donor_idx=donors, residuals=e, probs=probs, mean=mean, var=var)
