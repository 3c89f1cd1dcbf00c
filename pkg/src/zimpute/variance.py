"""Design-based variance estimation for the imputed total.

Linearization route: per-unit linearized values fold the sampling, fitted
probability and fitted-coefficient contributions into a single pseudo
variable; the sampling component is either the joint-probability double sum
(closed-form joints for stratified SRS) or the Hajek-Rosen single sum for
size-conditioned Poisson designs. The nonresponse component is a weighted sum
of squared mixture residuals; the balanced mechanism needs nothing more,
while the unbalanced donor mechanism adds an imputation component. A
with-replacement bootstrap (resampling within strata and re-running the whole
pipeline) backs applications where no linearization is available.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import expit

from .design import DesignError, DesignSpec, POISSON_REJECTIVE, STRATIFIED_SRS, joint_inclusion_probabilities
from .frames import RandomStream, SampleFrame
from .impute import ImputationResult, imputed_total
from .model import EigenClampSolver, PhiModel, RegularizedFit, weighted_logistic_fit

__all__ = [
    "LinearizedComponents",
    "VarianceReport",
    "linearized_components",
    "v1_joint",
    "v1_hajek_rosen",
    "total_variance",
    "bootstrap_variance",
]

Z_95 = 1.959963984540054  # two-sided 95% normal quantile


@dataclass(frozen=True)
class LinearizedComponents:
    """Per-unit linearized values and the closed-form variance pieces.

    ``v3`` and ``point_estimate`` are filled only when an imputation result
    was supplied (they depend on the imputed values).
    """

    xi_hat: np.ndarray
    a_hat: np.ndarray
    b_hat: np.ndarray
    c_hat: np.ndarray
    v2: float
    v3: Optional[float] = None
    point_estimate: Optional[float] = None


@dataclass(frozen=True)
class VarianceReport:
    method: str
    v1: float
    v2: float
    v3: Optional[float]
    total: float
    point_estimate: float
    ci_lower: float
    ci_upper: float
    hajek_rosen: bool


def _fit_response_probabilities(sample: SampleFrame) -> np.ndarray:
    """Logistic fit of the response indicator on the u covariates.

    Full (or empty) response is a degenerate fit; the probabilities are then
    the constant response share, which zeroes the nonresponse variance term
    exactly under full response.
    """
    share = float(np.mean(sample.r == 1))
    if share in (0.0, 1.0):
        return np.full(sample.n, share)
    gamma, _ = weighted_logistic_fit(sample.u, (sample.r == 1).astype(float),
                                     sample.omega)
    return expit(np.clip(sample.u @ gamma, -36.0, 36.0))


def linearized_components(sample: SampleFrame, phi: PhiModel, fit: RegularizedFit,
                          result: Optional[ImputationResult] = None, *,
                          response_probs: Optional[np.ndarray] = None) -> LinearizedComponents:
    """Compute the linearized values and the nonresponse/imputation terms.

    The two auxiliary regressions behind the correction vectors reuse the
    same eigenvalue clamp as the coefficient fit, so degenerate respondent
    configurations stay solvable. The nonresponse term weights each
    respondent's squared influence by d^2 (1 - p_hat): the response-phase
    variance of the linearized total is sum p(1-p) Delta^2 with influence
    Delta_i = d_i * bracket_i, estimated over respondents with fitted
    response probabilities (supplied via ``response_probs`` or fit here).
    """
    N = sample.parent.n_units
    r = (sample.r == 1).astype(np.float64)
    d, w, v = sample.d, sample.omega, sample.v
    z, u = sample.z, sample.u
    ph = phi.phi_hat
    y0 = sample.y_observed()
    eta0 = sample.eta_filled()
    pred = z @ fit.beta_hat

    miss_phi = d * (1.0 - r) * ph

    # correction for the estimated coefficient (shares the fitted Gram matrix)
    a_hat = fit.solve_regularized((z * miss_phi[:, None]).sum(axis=0) / N)

    # corrections for the estimated nonzero probability
    pq = ph * (1.0 - ph)
    gram_u = (u.T @ (u * (r * w * pq)[:, None])) / N
    solver_u = EigenClampSolver(gram_u, fit.threshold, name="probability-model Gram matrix")
    b_hat = solver_u.solve((u * (miss_phi * (1.0 - ph) * pred)[:, None]).sum(axis=0) / N)
    c_hat = solver_u.solve(
        (u * (w * r * pq * (z @ a_hat) * pred / v)[:, None]).sum(axis=0) / N
    )

    resid = y0 - ph * pred
    az = z @ a_hat
    bcu = u @ (b_hat - c_hat)
    xi = d * ph * pred + r * (d + w * ph * az / v) * resid + r * w * bcu * (eta0 - ph)

    if response_probs is None:
        response_probs = _fit_response_probabilities(sample)
    p_hat = np.asarray(response_probs, dtype=np.float64)
    inner = (1.0 + w * sample.pi * az / v) * resid + w * sample.pi * bcu * (eta0 - ph)
    v2 = float(np.sum(r * d * d * (1.0 - p_hat) * inner * inner))

    v3 = None
    point = None
    if result is not None:
        nr = sample.r == 0
        dev = result.y_star[nr] - ph[nr] * pred[nr]
        v3 = float(np.sum(sample.d[nr] ** 2 * dev * dev))
        point = imputed_total(sample, result)
    return LinearizedComponents(xi_hat=xi, a_hat=a_hat, b_hat=b_hat, c_hat=c_hat,
                                v2=v2, v3=v3, point_estimate=point)


def v1_joint(sample: SampleFrame, xi: np.ndarray, joint_probs: np.ndarray) -> float:
    """Double-sum sampling variance with pairwise inclusion probabilities."""
    if np.any(joint_probs <= 0.0):
        raise DesignError("a sampled pair has zero joint inclusion probability")
    pi = sample.pi
    coef = (joint_probs - np.outer(pi, pi)) / joint_probs
    return float(xi @ coef @ xi)


def v1_hajek_rosen(sample: SampleFrame, xi: np.ndarray) -> float:
    """Single-sum sampling variance for size-conditioned Poisson designs."""
    n = sample.n
    if n < 2:
        raise DesignError("Hajek-Rosen variance needs at least two sampled units")
    q = 1.0 - sample.pi
    denom = float(q.sum())
    ratio = float(np.sum(q * xi)) / denom if denom > 0.0 else 0.0
    return float(n / (n - 1) * np.sum(q * (xi - ratio) ** 2))


def total_variance(method: str, components: LinearizedComponents,
                   sample: SampleFrame, design: DesignSpec) -> VarianceReport:
    """Assemble the variance estimate and 95% normal interval for a method.

    The balanced mechanism needs no imputation term; the unbalanced donor
    mechanism adds it. The sampling term dispatches on the design: joint
    probabilities for stratified SRS, Hajek-Rosen otherwise.
    """
    if method not in ("MRR", "BMRR"):
        raise ValueError(f"no variance estimator for method {method!r}")
    if components.point_estimate is None:
        raise ValueError("components were built without an imputation result")
    hr = design.kind == POISSON_REJECTIVE
    if hr:
        v1 = v1_hajek_rosen(sample, components.xi_hat)
    else:
        joints = joint_inclusion_probabilities(sample, design)
        v1 = v1_joint(sample, components.xi_hat, joints)
    total = v1 + components.v2
    v3 = None
    if method == "MRR":
        if components.v3 is None:
            raise ValueError("imputation variance term missing for MRR")
        v3 = components.v3
        total += v3
    half = Z_95 * float(np.sqrt(max(total, 0.0)))
    point = components.point_estimate
    return VarianceReport(method=method, v1=float(v1), v2=components.v2, v3=v3,
                          total=float(total), point_estimate=point,
                          ci_lower=point - half, ci_upper=point + half,
                          hajek_rosen=hr)


def bootstrap_variance(sample: SampleFrame,
                       pipeline: Callable[[SampleFrame, RandomStream], np.ndarray],
                       n_replicates: int, stream: RandomStream, *,
                       replicate_stream: Optional[Callable[[int], RandomStream]] = None):
    """With-replacement bootstrap variance of a full estimation pipeline.

    Each replicate resamples n_h units with replacement inside every stratum
    of the sample, scales design and imputation weights by the multiplicity
    and re-runs ``pipeline`` (which should refit and re-impute) on the
    reweighted frame with its own stream. Returns the empirical variance of
    the replicate estimates (componentwise for vector pipelines).
    ``replicate_stream`` overrides the per-replicate stream derivation.
    """
    if n_replicates < 2:
        raise ValueError("need at least two bootstrap replicates")
    labels = sample.stratum
    strata = [np.flatnonzero(labels == lab) for lab in np.unique(labels)]
    for members in strata:
        if members.size < 2:
            raise ValueError("bootstrap needs at least two sampled units per stratum")
    if replicate_stream is None:
        replicate_stream = stream.substream

    estimates = []
    for b in range(n_replicates):
        rs = replicate_stream(b)
        # independent substreams for the resampling draw and the pipeline rerun
        g = rs.substream(0).generator()
        mult = np.zeros(sample.n)
        for members in strata:
            n_h = members.size
            draws = g.integers(0, n_h, size=n_h)
            mult[members] = np.bincount(draws, minlength=n_h)
        keep = np.flatnonzero(mult > 0)
        boot = SampleFrame(
            parent=sample.parent,
            members=sample.members[keep],
            pi=sample.pi[keep],
            omega=sample.omega[keep] * mult[keep],
            r=sample.r[keep],
            eta=sample.eta[keep],
            d=sample.d[keep] * mult[keep],
        )
        estimates.append(
            np.atleast_1d(np.asarray(pipeline(boot, rs.substream(1)), dtype=np.float64))
        )
    stacked = np.vstack(estimates)
    var = stacked.var(axis=0, ddof=1)
    return float(var[0]) if var.shape[0] == 1 else var
