"""Sampling designs and complete-data design-based estimators.

Two designs are supported: size-conditioned Poisson sampling (Poisson draws
rejected until the realized size hits the target, a maximum-entropy fixed
size design) and stratified simple random sampling without replacement.
Estimators: the expansion (inverse-probability) total and the plug-in
weighted distribution function, plus the left-continuous finite-population
quantile.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Union

import numpy as np

from .frames import PopulationFrame, SampleFrame, as_generator

__all__ = [
    "DesignError",
    "DesignSpec",
    "inclusion_probabilities",
    "draw_sample",
    "ht_total",
    "hajek_cdf",
    "population_quantile",
    "joint_inclusion_probabilities",
]

POISSON_REJECTIVE = "poisson-rejective"
STRATIFIED_SRS = "stratified-srs"


class DesignError(ValueError):
    """Infeasible or inconsistent design specification."""


@dataclass(frozen=True)
class DesignSpec:
    """Sampling design description.

    ``target_size`` is the fixed sample size (for stratified designs: the
    per-stratum size, either one integer for all strata or a mapping from
    stratum label to size). ``size_measure`` makes the rejective design draw
    with probabilities proportional to the measure, capped at one and
    rescaled so they sum to the target size.
    """

    kind: str
    target_size: Union[int, Mapping[int, int]]
    size_measure: Optional[np.ndarray] = None
    max_attempts: int = 1_000_000

    def __post_init__(self):
        if self.kind not in (POISSON_REJECTIVE, STRATIFIED_SRS):
            raise DesignError(f"unknown design kind {self.kind!r}")


def _capped_proportional(measure: np.ndarray, n: int, tol: float = 1e-9) -> np.ndarray:
    """Solve pi_i = min(1, c * measure_i) with sum(pi) = n by bisection."""
    N = measure.shape[0]
    if n > N:
        raise DesignError(f"target size {n} exceeds population size {N}")
    if np.any(measure <= 0.0):
        raise DesignError("size measure must be strictly positive")
    if n == N:
        return np.ones(N)
    total = float(measure.sum())
    if total <= 0.0:
        raise DesignError("all-zero size measure")

    def realized(c):
        return float(np.minimum(1.0, c * measure).sum())

    lo = 0.0
    hi = n / total
    while realized(hi) < n:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        s = realized(mid)
        if abs(s - n) <= tol:
            lo = hi = mid
            break
        if s < n:
            lo = mid
        else:
            hi = mid
    c = 0.5 * (lo + hi)
    pi = np.minimum(1.0, c * measure)
    if abs(float(pi.sum()) - n) > tol:
        raise DesignError("capped-proportional solver did not converge")
    return pi


def _stratum_sizes(spec: DesignSpec, labels: np.ndarray) -> dict:
    uniq = np.unique(labels)
    if isinstance(spec.target_size, Mapping):
        sizes = {}
        for lab in uniq:
            if int(lab) not in spec.target_size:
                raise DesignError(f"no target size for stratum {int(lab)}")
            sizes[int(lab)] = int(spec.target_size[int(lab)])
        return sizes
    return {int(lab): int(spec.target_size) for lab in uniq}


def inclusion_probabilities(pop: PopulationFrame, spec: DesignSpec) -> np.ndarray:
    """First-order inclusion probabilities implied by the design."""
    N = pop.n_units
    if spec.kind == POISSON_REJECTIVE:
        n = int(spec.target_size)
        measure = spec.size_measure
        if measure is None:
            measure = np.ones(N)
        measure = np.asarray(measure, dtype=np.float64)
        if measure.shape[0] != N:
            raise DesignError("size measure length mismatch")
        return _capped_proportional(measure, n)
    # stratified SRS
    sizes = _stratum_sizes(spec, pop.stratum)
    pi = np.empty(N)
    for lab, n_h in sizes.items():
        mask = pop.stratum == lab
        N_h = int(mask.sum())
        if n_h > N_h or n_h < 1:
            raise DesignError(f"stratum {lab}: cannot draw {n_h} of {N_h}")
        pi[mask] = n_h / N_h
    return pi


def draw_sample(pop: PopulationFrame, spec: DesignSpec, stream, *,
                pi: Optional[np.ndarray] = None) -> SampleFrame:
    """Draw one sample; design weights are set to 1/pi, imputation weights to 1.

    The rejective design repeats independent Poisson draws with the working
    probabilities ``pi`` until the realized size equals the target; the
    conditioned design's true first-order probabilities then deviate from the
    working ones by O(1/n), which is all the downstream asymptotics need.
    """
    g = as_generator(stream)
    if pi is None:
        pi = inclusion_probabilities(pop, spec)
    if spec.kind == POISSON_REJECTIVE:
        n = int(spec.target_size)
        for _ in range(spec.max_attempts):
            # uniforms live in [0, 1), so pi_i = 1 units are always kept
            mask = g.random(pop.n_units) < pi
            if int(mask.sum()) == n:
                members = np.flatnonzero(mask)
                return SampleFrame.from_members(pop, members, pi[members])
        raise DesignError(
            f"rejective sampling failed to hit size {n} in {spec.max_attempts} attempts"
        )
    # stratified SRS: uniform without-replacement draw inside each stratum
    sizes = _stratum_sizes(spec, pop.stratum)
    chosen = []
    for lab in sorted(sizes):
        idx = np.flatnonzero(pop.stratum == lab)
        take = g.choice(idx.shape[0], size=sizes[lab], replace=False)
        chosen.append(idx[np.sort(take)])
    members = np.concatenate(chosen)
    return SampleFrame.from_members(pop, members, pi[members])


def _member_values(sample: SampleFrame, values) -> np.ndarray:
    vals = np.asarray(values, dtype=np.float64)
    if vals.shape[0] == sample.n:
        return vals
    if vals.shape[0] == sample.parent.n_units:
        return vals[sample.members]
    raise DesignError("values must align with the sample or its parent population")


def ht_total(sample: SampleFrame, values) -> float:
    """Expansion estimator of a total: sum of d_i * value_i over the sample."""
    vals = _member_values(sample, values)
    return float(np.sum(sample.d * vals))


def hajek_cdf(sample: SampleFrame, values, t: float) -> float:
    """Plug-in estimator of the distribution function at ``t``."""
    vals = _member_values(sample, values)
    nhat = float(np.sum(sample.d))
    if nhat <= 0.0:
        raise DesignError("estimated population size is not positive")
    return float(np.sum(sample.d * (vals <= t)) / nhat)


def population_quantile(pop: PopulationFrame, alpha: float) -> float:
    """Left-continuous inverse of the finite-population distribution function."""
    if not 0.0 < alpha < 1.0:
        raise DesignError("quantile level must lie in (0, 1)")
    ys = np.sort(pop.y)
    k = int(np.ceil(alpha * ys.shape[0] - 1e-12))
    return float(ys[max(k, 1) - 1])


def joint_inclusion_probabilities(sample: SampleFrame, spec: DesignSpec) -> np.ndarray:
    """Pairwise inclusion probabilities for the sampled units (n x n).

    Closed form is available for stratified SRS: within a stratum
    n_h (n_h - 1) / (N_h (N_h - 1)), across strata the product of the
    first-order probabilities, and pi_i on the diagonal. Rejective designs
    have no closed form here; use the Hajek-Rosen variance route instead.
    """
    if spec.kind != STRATIFIED_SRS:
        raise DesignError("joint probabilities implemented for stratified-srs only")
    labels = sample.stratum
    parent_labels = sample.parent.stratum
    pi = sample.pi
    n = sample.n
    pij = np.outer(pi, pi)
    for lab in np.unique(labels):
        inside = labels == lab
        N_h = int((parent_labels == lab).sum())
        n_h = int(inside.sum())
        if N_h < 2:
            if n_h > 0:
                pij[np.ix_(inside, inside)] = 1.0
            continue
        # realized sample size in the stratum equals the design's target size
        joint = n_h * (n_h - 1) / (N_h * (N_h - 1))
        block = np.full((n_h, n_h), joint)
        np.fill_diagonal(block, pi[inside])
        pij[np.ix_(inside, inside)] = block
    return pij
