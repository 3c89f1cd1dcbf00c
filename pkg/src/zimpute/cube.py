"""Cube-method engine: flight phase, landing phase, and balanced generation.

The flight phase is a martingale walk: pick a deterministic direction in the
null space of the constraint matrix restricted to the still-fractional cells,
move to whichever bound is reachable first (up with probability
lam2/(lam1+lam2), down otherwise), repeat until no direction exists. Every
step preserves the constraint functionals exactly and each cell in
expectation. The landing phase drops constraints one at a time (last row
first) and re-runs the flight on the survivors; with no constraints left the
walk reduces to independent Bernoulli rounding.

Two specialized hot paths back the imputation mechanisms: a single-constraint
walk for balanced zero/nonzero generation and a per-recipient reduction for
balanced with-replacement donor assignment. Both live in ``zimpute._kernels``
(compiled when available) and are exact instances of the walk above.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from . import _kernels
from .frames import as_generator
from .model import PoolError, ResidualPool

__all__ = [
    "BalancingProblem",
    "CubeOutcome",
    "DonorAssignment",
    "flight_phase",
    "landing_phase",
    "balanced_bernoulli",
    "balanced_donor_assignment",
]

# Cells within EPS of a bound count as integral (snapped to the bound).
EPS = 1e-9


@dataclass(frozen=True)
class BalancingProblem:
    """``m`` decision cells with initial probabilities and linear constraints.

    ``constraints`` has one row per balancing constraint; all-zero rows are
    inert and dropped by the engine. ``tolerance`` is the advertised bound on
    post-landing constraint deviation reporting, not an enforcement knob.
    """

    p0: np.ndarray
    constraints: np.ndarray = field(default=None)  # type: ignore[assignment]
    tolerance: float = 1e-9

    def __post_init__(self):
        p0 = np.asarray(self.p0, dtype=np.float64)
        if p0.ndim != 1:
            raise ValueError("p0 must be a vector")
        if np.any(p0 < 0.0) or np.any(p0 > 1.0):
            raise ValueError("p0 entries must lie in [0, 1]")
        A = self.constraints
        if A is None:
            A = np.zeros((0, p0.shape[0]))
        A = np.atleast_2d(np.asarray(A, dtype=np.float64))
        if A.shape[1] != p0.shape[0]:
            raise ValueError("constraint matrix width must match the cell count")
        object.__setattr__(self, "p0", p0)
        object.__setattr__(self, "constraints", A)

    @property
    def n_cells(self) -> int:
        return self.p0.shape[0]

    @property
    def n_constraints(self) -> int:
        return self.constraints.shape[0]

    def active_constraints(self) -> np.ndarray:
        A = self.constraints
        keep = np.any(A != 0.0, axis=1)
        return A[keep]


@dataclass(frozen=True)
class CubeOutcome:
    """Final 0/1 vector with the realized constraint deviation."""

    x: np.ndarray
    constraint_residual: np.ndarray
    rounded_cells: int


def _snap(p: np.ndarray) -> None:
    p[p <= EPS] = 0.0
    p[p >= 1.0 - EPS] = 1.0


def _null_direction(B: np.ndarray) -> Optional[np.ndarray]:
    """First null-space basis vector of B from an orthogonal decomposition."""
    if B.shape[1] == 0:
        return None
    _, s, vt = np.linalg.svd(B)
    if s.size == 0:
        return vt[0]
    tol = max(B.shape) * np.finfo(np.float64).eps * float(s[0])
    rank = int(np.sum(s > tol))
    if rank >= B.shape[1]:
        return None
    return vt[rank]


def _run_flight(p: np.ndarray, A: np.ndarray, g: np.random.Generator,
                trace=None) -> np.ndarray:
    """Walk ``p`` (modified in place) until no null direction remains."""
    _snap(p)
    if trace is not None:
        trace.append(A @ p)
    if A.shape[0] == 0:
        # no constraints: each fractional cell is rounded independently
        for j in np.flatnonzero((p > 0.0) & (p < 1.0)):
            p[j] = 1.0 if g.random() < p[j] else 0.0
        return p
    while True:
        frac = np.flatnonzero((p > 0.0) & (p < 1.0))
        if frac.size == 0:
            break
        u = _null_direction(A[:, frac])
        if u is None:
            break
        pv = p[frac]
        big = np.abs(u) > 1e-13
        up_room = np.where(u > 0, 1.0 - pv, pv)
        dn_room = np.where(u > 0, pv, 1.0 - pv)
        au = np.abs(u[big])
        lam1 = float(np.min(up_room[big] / au))
        lam2 = float(np.min(dn_room[big] / au))
        step = lam1 if g.random() < lam2 / (lam1 + lam2) else -lam2
        p[frac] = np.clip(pv + step * u, 0.0, 1.0)
        _snap(p)
        if trace is not None:
            trace.append(A @ p)
    return p


def flight_phase(problem: BalancingProblem, stream, *, trace=None) -> np.ndarray:
    """Run the constrained martingale walk from ``p0``.

    Returns a vector in [0,1]^m with at most ``n_constraints`` fractional
    cells; the constraint image A p is preserved exactly along the walk and
    every cell keeps its initial expectation. ``trace``, when a list, is
    appended the constraint image after every step (drift diagnostics).
    """
    g = as_generator(stream)
    p = problem.p0.copy()
    return _run_flight(p, problem.active_constraints(), g, trace=trace)


def landing_phase(partial: np.ndarray, problem: BalancingProblem, stream) -> CubeOutcome:
    """Resolve leftover fractional cells by relaxing constraints last-first.

    Each relaxation re-runs the flight on the survivors; once every
    constraint is dropped a lone fractional cell is rounded Bernoulli(p).
    Marginal expectations are preserved throughout.
    """
    g = as_generator(stream)
    x = np.asarray(partial, dtype=np.float64).copy()
    _snap(x)
    A = problem.active_constraints()
    rounded = int(np.sum((x > 0.0) & (x < 1.0)))
    k = A.shape[0]
    while np.any((x > 0.0) & (x < 1.0)):
        k -= 1
        _run_flight(x, A[:k] if k > 0 else A[:0], g)
    residual = problem.constraints @ (x - problem.p0)
    return CubeOutcome(x=x, constraint_residual=residual, rounded_cells=rounded)


def balanced_bernoulli(probs: np.ndarray, balance: np.ndarray, stream) -> np.ndarray:
    """Generate a 0/1 vector with cellwise means ``probs`` balanced on ``balance``.

    ``balance`` holds one balancing value per cell (a single constraint, the
    hot path) or a (K, m) constraint matrix. The single-constraint functional
    sum(balance * (x - probs)) is zero exactly up to the final landing cell.
    """
    g = as_generator(stream)
    p = np.ascontiguousarray(np.asarray(probs, dtype=np.float64).copy())
    if np.any(p < 0.0) or np.any(p > 1.0):
        raise ValueError("probabilities must lie in [0, 1]")
    bal = np.asarray(balance, dtype=np.float64)
    m = p.shape[0]
    if bal.ndim == 1:
        if bal.shape[0] != m:
            raise ValueError("balance length mismatch")
        uniforms = g.random(m + 2)
        used, lone = _kernels.flight_k1(p, np.ascontiguousarray(bal), uniforms)
        if lone >= 0:
            p[lone] = 1.0 if uniforms[used] < p[lone] else 0.0
        return p
    problem = BalancingProblem(p0=p, constraints=bal)
    partial = flight_phase(problem, g)
    return landing_phase(partial, problem, g).x


class DonorAssignment(NamedTuple):
    epsilons: np.ndarray
    positions: np.ndarray


def balanced_donor_assignment(recipient_weights: np.ndarray, pool: ResidualPool,
                              stream) -> DonorAssignment:
    """Assign one pool residual to each recipient, balanced across recipients.

    Decision cells are (recipient, donor) indicators initialized at the pool
    probabilities; the walk keeps one donor per recipient structurally and
    preserves sum_i w_i * sum_j psi_ij e_j, so the weighted total of assigned
    residuals matches its expectation up to one Bernoulli-rounded recipient.
    Marginally each recipient draws donor j with probability probs[j].
    """
    g = as_generator(stream)
    w = np.ascontiguousarray(np.asarray(recipient_weights, dtype=np.float64))
    if pool.donor_idx.size == 0:
        raise PoolError("empty donor pool")
    R = w.shape[0]
    if R == 0:
        return DonorAssignment(np.zeros(0), np.zeros(0, dtype=np.int64))
    D = pool.residuals.shape[0]
    uniforms = g.random(R * D + R + 8)
    donors = np.empty(R, dtype=np.int64)
    _kernels.assign_donors(
        np.ascontiguousarray(pool.probs),
        np.ascontiguousarray(pool.residuals),
        w,
        uniforms,
        donors,
    )
    return DonorAssignment(epsilons=pool.residuals[donors], positions=donors)
