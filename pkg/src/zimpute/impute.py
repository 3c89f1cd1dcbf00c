"""Imputation mechanisms for zero-inflated variables and imputed estimators.

Four mechanisms share one fitted model. RR draws the zero indicator
independently and imputes the fitted regression value; BRR generates the
indicators under a balancing constraint that removes the indicator share of
the imputation variance of the total. MRR additionally adds a donor residual
drawn with replacement from the observed pool, reproducing the full
conditional distribution; BMRR balances both the indicators and the donor
residuals, keeping MRR's marginal distribution while (approximately)
eliminating the imputation variance of the total.

All mechanisms use the regularized coefficient and never touch respondent
values.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .cube import balanced_bernoulli, balanced_donor_assignment
from .frames import RandomStream, SampleFrame, as_generator
from .model import PhiModel, RegularizedFit, ResidualPool

__all__ = [
    "METHODS",
    "ImputationResult",
    "impute_rr",
    "impute_brr",
    "impute_mrr",
    "impute_bmrr",
    "impute",
    "imputed_total",
    "imputed_cdf",
    "completed_values",
]

METHODS = ("RR", "BRR", "MRR", "BMRR")


@dataclass(frozen=True)
class ImputationResult:
    """Imputed values for the non-respondents of one sample.

    Arrays are aligned with the sample; respondent positions hold NaN
    (``y_star``, ``eta_star``) or -1 (``donor``). ``donor`` is the sample
    position of the residual donor, set only where a donor was used.
    ``seed_record`` echoes the (seed, stream_id) of the driving stream when
    one was supplied.
    """

    method: str
    y_star: np.ndarray
    eta_star: np.ndarray
    donor: np.ndarray
    seed_record: Optional[tuple] = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown imputation method {self.method!r}")


def _seed_record(stream):
    if isinstance(stream, RandomStream):
        return (stream.seed, stream.stream_id)
    return None


def _alloc(sample: SampleFrame):
    n = sample.n
    y_star = np.full(n, np.nan)
    eta_star = np.full(n, np.nan)
    donor = np.full(n, -1, dtype=np.int64)
    return y_star, eta_star, donor


def impute_rr(sample: SampleFrame, phi: PhiModel, fit: RegularizedFit,
              stream) -> ImputationResult:
    """Independent zero indicators, regression-value imputation."""
    rec = _seed_record(stream)
    g = as_generator(stream)
    y_star, eta_star, donor = _alloc(sample)
    nr = np.flatnonzero(sample.r == 0)
    eta = (g.random(nr.size) < phi.phi_hat[nr]).astype(np.float64)
    pred = sample.z[nr] @ fit.beta_hat
    eta_star[nr] = eta
    y_star[nr] = eta * pred
    return ImputationResult("RR", y_star, eta_star, donor, rec)


def impute_brr(sample: SampleFrame, phi: PhiModel, fit: RegularizedFit,
               stream) -> ImputationResult:
    """Balanced zero indicators, regression-value imputation.

    The indicators are generated so that the design-weighted sum of
    (indicator - probability) times the regression value is (almost) zero,
    which eliminates the imputation variance of the imputed total.
    """
    rec = _seed_record(stream)
    g = as_generator(stream)
    y_star, eta_star, donor = _alloc(sample)
    nr = np.flatnonzero(sample.r == 0)
    pred = sample.z[nr] @ fit.beta_hat
    eta = balanced_bernoulli(phi.phi_hat[nr], sample.d[nr] * pred, g)
    eta_star[nr] = eta
    y_star[nr] = eta * pred
    return ImputationResult("BRR", y_star, eta_star, donor, rec)


def impute_mrr(sample: SampleFrame, phi: PhiModel, fit: RegularizedFit,
               pool: ResidualPool, stream) -> ImputationResult:
    """Independent indicators plus with-replacement donor residuals."""
    rec = _seed_record(stream)
    g = as_generator(stream)
    y_star, eta_star, donor = _alloc(sample)
    nr = np.flatnonzero(sample.r == 0)
    eta = (g.random(nr.size) < phi.phi_hat[nr]).astype(np.float64)
    eta_star[nr] = eta
    y_star[nr] = 0.0
    hit = nr[eta == 1.0]
    if hit.size:
        pos = g.choice(pool.residuals.shape[0], size=hit.size, p=pool.probs)
        pred = sample.z[hit] @ fit.beta_hat
        y_star[hit] = pred + np.sqrt(sample.v[hit]) * pool.residuals[pos]
        donor[hit] = pool.donor_idx[pos]
    return ImputationResult("MRR", y_star, eta_star, donor, rec)


def impute_bmrr(sample: SampleFrame, phi: PhiModel, fit: RegularizedFit,
                pool: ResidualPool, stream) -> ImputationResult:
    """Two-step balanced mechanism: balanced indicators, then balanced donors.

    Step one generates the zero indicators under the same constraint as BRR;
    step two assigns donor residuals to the nonzero recipients so that the
    d * sqrt(v)-weighted residual total stays at its expectation. One
    generator threads both steps, so a single stream reproduces the result.
    """
    rec = _seed_record(stream)
    g = as_generator(stream)
    y_star, eta_star, donor = _alloc(sample)
    nr = np.flatnonzero(sample.r == 0)
    pred_nr = sample.z[nr] @ fit.beta_hat
    eta = balanced_bernoulli(phi.phi_hat[nr], sample.d[nr] * pred_nr, g)
    eta_star[nr] = eta
    y_star[nr] = 0.0
    hit = nr[eta == 1.0]
    if hit.size:
        weights = sample.d[hit] * np.sqrt(sample.v[hit])
        assignment = balanced_donor_assignment(weights, pool, g)
        pred = sample.z[hit] @ fit.beta_hat
        y_star[hit] = pred + np.sqrt(sample.v[hit]) * assignment.epsilons
        donor[hit] = pool.donor_idx[assignment.positions]
    return ImputationResult("BMRR", y_star, eta_star, donor, rec)


def impute(method: str, sample: SampleFrame, phi: PhiModel, fit: RegularizedFit,
           pool: Optional[ResidualPool], stream) -> ImputationResult:
    """Dispatch one of the four mechanisms by tag."""
    if method == "RR":
        return impute_rr(sample, phi, fit, stream)
    if method == "BRR":
        return impute_brr(sample, phi, fit, stream)
    if method == "MRR":
        if pool is None:
            raise ValueError("MRR needs a residual pool")
        return impute_mrr(sample, phi, fit, pool, stream)
    if method == "BMRR":
        if pool is None:
            raise ValueError("BMRR needs a residual pool")
        return impute_bmrr(sample, phi, fit, pool, stream)
    raise ValueError(f"unknown imputation method {method!r}")


def imputed_total(sample: SampleFrame, result: ImputationResult) -> float:
    """Design-weighted total over observed plus imputed values."""
    resp = sample.r == 1
    t = float(np.sum(sample.d[resp] * sample.y[resp]))
    nr = ~resp
    if np.any(nr):
        t += float(np.sum(sample.d[nr] * result.y_star[nr]))
    return t


def imputed_cdf(sample: SampleFrame, result: ImputationResult, t: float) -> float:
    """Plug-in distribution function over observed plus imputed values."""
    resp = sample.r == 1
    nhat = float(np.sum(sample.d))
    acc = float(np.sum(sample.d[resp] * (sample.y[resp] <= t)))
    nr = ~resp
    if np.any(nr):
        acc += float(np.sum(sample.d[nr] * (result.y_star[nr] <= t)))
    return acc / nhat


def completed_values(sample: SampleFrame, result: ImputationResult):
    """Merge observed and imputed columns for export.

    Returns ``(y_completed, eta_star, donor_index)`` aligned with the sample;
    respondents keep their observed value, eta_star/donor stay NaN/-1 there.
    """
    resp = sample.r == 1
    y_completed = np.where(resp, sample.y, result.y_star)
    return y_completed, result.eta_star.copy(), result.donor.copy()
