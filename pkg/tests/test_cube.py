import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from zimpute.cube import (
    BalancingProblem,
    balanced_bernoulli,
    balanced_donor_assignment,
    flight_phase,
    landing_phase,
)
from zimpute.frames import RandomStream
from zimpute.model import PoolError, ResidualPool


def _pool(residuals, probs=None, weights_idx=None):
    e = np.asarray(residuals, dtype=float)
    if probs is None:
        probs = np.full(e.shape[0], 1.0 / e.shape[0])
    probs = np.asarray(probs, dtype=float)
    mean = float(np.sum(probs * e))
    var = float(np.sum(probs * (e - mean) ** 2))
    return ResidualPool(donor_idx=np.arange(e.shape[0]), residuals=e, probs=probs,
                        mean=mean, var=var)


# --- flight phase -------------------------------------------------------------

def test_integral_cells_pass_through():
    problem = BalancingProblem(p0=np.array([0.0, 1.0, 1.0, 0.0]),
                               constraints=np.array([[1.0, 2.0, 3.0, 4.0]]))
    p = flight_phase(problem, RandomStream(0))
    assert np.array_equal(p, [0.0, 1.0, 1.0, 0.0])


def test_two_cell_antithetic_selection():
    problem = BalancingProblem(p0=np.array([0.5, 0.5]), constraints=np.array([[1.0, 1.0]]))
    g = RandomStream(4).generator()
    reps = 10_000
    ones = 0
    for _ in range(reps):
        p = flight_phase(problem, g)
        assert sorted(p.tolist()) == [0.0, 1.0]
        ones += int(p[0] == 1.0)
    freq = ones / reps
    assert abs(freq - 0.5) <= 3 * np.sqrt(0.25 / reps)


def test_no_constraints_is_poisson_rounding():
    p0 = np.array([0.2, 0.5, 0.8])
    problem = BalancingProblem(p0=p0, constraints=np.zeros((0, 3)))
    g = RandomStream(8).generator()
    reps = 10_000
    acc = np.zeros(3)
    prod_01 = 0
    for _ in range(reps):
        p = flight_phase(problem, g)
        assert set(np.unique(p)) <= {0.0, 1.0}
        acc += p
        prod_01 += int(p[0] == 1.0 and p[1] == 1.0)
    freq = acc / reps
    assert np.all(np.abs(freq - p0) <= 3 * np.sqrt(p0 * (1 - p0) / reps))
    # independence spot check on the first two cells
    joint = prod_01 / reps
    se = np.sqrt(joint * (1 - joint) / reps)
    assert abs(joint - 0.2 * 0.5) <= 4 * se + 1e-3


def test_flight_preserves_constraints_and_stops_at_k():
    rng = np.random.default_rng(10)
    for trial in range(30):
        m = int(rng.integers(2, 11))
        K = int(rng.integers(1, min(4, m) + 1))
        A = rng.normal(size=(K, m))
        p0 = rng.uniform(0.05, 0.95, m)
        problem = BalancingProblem(p0=p0, constraints=A)
        trace = []
        p = flight_phase(problem, RandomStream(trial), trace=trace)
        frac = (p > 0.0) & (p < 1.0)
        assert frac.sum() <= K
        drift = np.max([np.max(np.abs(t - trace[0])) for t in trace])
        assert drift <= 1e-9 * np.linalg.norm(A)
        assert np.max(np.abs(A @ p - A @ p0)) <= 1e-9 * np.linalg.norm(A)


def test_zero_rows_are_dropped():
    problem = BalancingProblem(p0=np.array([0.3, 0.7]),
                               constraints=np.array([[0.0, 0.0], [1.0, -1.0]]))
    p = flight_phase(problem, RandomStream(3))
    assert ((p > 0.0) & (p < 1.0)).sum() <= 1


# --- landing phase --------------------------------------------------------------

def test_landing_identity_on_integral_input():
    problem = BalancingProblem(p0=np.array([0.4, 0.6]), constraints=np.array([[1.0, 1.0]]))
    out = landing_phase(np.array([1.0, 0.0]), problem, RandomStream(0))
    assert np.array_equal(out.x, [1.0, 0.0])
    assert out.rounded_cells == 0


def test_landing_single_fractional_cell_is_bernoulli():
    problem = BalancingProblem(p0=np.array([0.3]), constraints=np.array([[2.0]]))
    g = RandomStream(14).generator()
    reps = 10_000
    ones = 0
    for _ in range(reps):
        out = landing_phase(np.array([0.3]), problem, g)
        assert out.x[0] in (0.0, 1.0)
        ones += int(out.x[0] == 1.0)
    assert abs(ones / reps - 0.3) <= 3 * np.sqrt(0.3 * 0.7 / reps)


def test_landing_residual_bounded_by_rounded_cells():
    rng = np.random.default_rng(5)
    for trial in range(25):
        m = int(rng.integers(2, 11))
        K = int(rng.integers(1, 4))
        A = rng.normal(size=(K, m))
        p0 = rng.uniform(0.05, 0.95, m)
        problem = BalancingProblem(p0=p0, constraints=A)
        stream = RandomStream(trial, 1)
        g = stream.generator()
        partial = flight_phase(problem, g)
        frac = (partial > 0.0) & (partial < 1.0)
        out = landing_phase(partial, problem, g)
        assert out.rounded_cells == int(frac.sum())
        bound = np.abs(A[:, frac]).sum(axis=1) + 1e-9 * (np.linalg.norm(A) + 1.0)
        assert np.all(np.abs(out.constraint_residual) <= bound)
        # marginals stay inside [0,1] and integral
        assert set(np.unique(out.x)) <= {0.0, 1.0}


def test_flight_plus_landing_preserves_marginals():
    p0 = np.array([0.15, 0.35, 0.5, 0.65, 0.85, 0.45])
    A = np.array([[3.0, -1.0, 2.0, 0.5, 5.0, 1.5],
                  [1.0, 1.0, 1.0, 1.0, 1.0, 1.0]])
    problem = BalancingProblem(p0=p0, constraints=A)
    g = RandomStream(123).generator()
    reps = 10_000
    acc = np.zeros(p0.shape[0])
    for _ in range(reps):
        out = landing_phase(flight_phase(problem, g), problem, g)
        acc += out.x
    freq = acc / reps
    sd = np.sqrt(p0 * (1 - p0) / reps)
    assert np.all(np.abs(freq - p0) <= 3 * sd)


# --- balanced bernoulli -----------------------------------------------------------

def test_balanced_bernoulli_all_certain():
    eta = balanced_bernoulli(np.ones(4), np.array([2.0, 1.0, 3.0, 4.0]), RandomStream(0))
    assert np.array_equal(eta, np.ones(4))


def test_balanced_bernoulli_two_cell_antithetic():
    g = RandomStream(6).generator()
    reps = 6000
    ones = 0
    for _ in range(reps):
        eta = balanced_bernoulli(np.array([0.5, 0.5]), np.array([3.0, 3.0]), g)
        assert sorted(eta.tolist()) == [0.0, 1.0]
        ones += int(eta[0] == 1.0)
    assert abs(ones / reps - 0.5) <= 3 * np.sqrt(0.25 / reps)


def test_balanced_bernoulli_marginals_and_balance():
    rng = np.random.default_rng(2)
    m = 40
    probs = rng.uniform(0.1, 0.9, m)
    w = rng.normal(50.0, 20.0, m)
    g = RandomStream(31).generator()
    reps = 10_000
    acc = np.zeros(m)
    worst = 0.0
    for _ in range(reps):
        eta = balanced_bernoulli(probs, w, g)
        acc += eta
        worst = max(worst, abs(float(np.dot(w, eta - probs))))
    freq = acc / reps
    sd = np.sqrt(probs * (1 - probs) / reps)
    assert np.all(np.abs(freq - probs) <= 3.7 * sd)
    # residual bounded by the single landing cell
    assert worst <= np.abs(w).max() + 1e-9


def test_balanced_bernoulli_multi_constraint_path():
    probs = np.array([0.3, 0.5, 0.7, 0.4])
    bal = np.array([[1.0, 2.0, 3.0, 4.0], [1.0, 1.0, 1.0, 1.0]])
    eta = balanced_bernoulli(probs, bal, RandomStream(9))
    assert set(np.unique(eta)) <= {0.0, 1.0}


# --- balanced donor assignment ------------------------------------------------------

def test_single_donor_assignment():
    pool = _pool([1.5])
    out = balanced_donor_assignment(np.array([2.0, 3.0, 4.0]), pool, RandomStream(0))
    assert np.array_equal(out.positions, [0, 0, 0])
    assert np.allclose(out.epsilons, 1.5)
    w = np.array([2.0, 3.0, 4.0])
    assert abs(np.sum(w * (out.epsilons - pool.mean))) == 0.0


def test_one_recipient_two_donors_even_split():
    pool = _pool([-1.0, 1.0])
    g = RandomStream(44).generator()
    reps = 10_000
    hi = 0
    for _ in range(reps):
        out = balanced_donor_assignment(np.array([5.0]), pool, g)
        hi += int(out.positions[0] == 1)
    assert abs(hi / reps - 0.5) <= 3 * np.sqrt(0.25 / reps)


def test_donor_marginals_match_pool_probabilities():
    rng = np.random.default_rng(8)
    D, R = 6, 12
    probs = rng.uniform(0.3, 1.5, D)
    probs /= probs.sum()
    pool = _pool(rng.normal(0, 3, D), probs=probs)
    w = rng.uniform(2.0, 9.0, R)
    g = RandomStream(15).generator()
    reps = 10_000
    counts = np.zeros((R, D))
    for _ in range(reps):
        out = balanced_donor_assignment(w, pool, g)
        counts[np.arange(R), out.positions] += 1
    freq = counts / reps
    sd = np.sqrt(probs * (1 - probs) / reps)
    assert np.all(np.abs(freq - probs[None, :]) <= 4.2 * sd[None, :])


def test_donor_balance_residual_bound():
    rng = np.random.default_rng(18)
    D, R = 9, 25
    pool = _pool(rng.normal(0, 4, D))
    w = rng.uniform(3.0, 12.0, R)
    spread = pool.residuals.max() - pool.residuals.min()
    g = RandomStream(77).generator()
    for _ in range(300):
        out = balanced_donor_assignment(w, pool, g)
        resid = float(np.sum(w * (out.epsilons - pool.mean)))
        assert abs(resid) <= w.max() * spread + 1e-9


def test_empty_pool_raises():
    pool = ResidualPool(donor_idx=np.zeros(0, dtype=np.int64), residuals=np.zeros(0),
                        probs=np.zeros(0), mean=0.0, var=0.0)
    with pytest.raises(PoolError):
        balanced_donor_assignment(np.array([1.0]), pool, RandomStream(0))


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=2, max_value=10), st.integers(min_value=0, max_value=3),
       st.integers(min_value=0, max_value=10_000))
def test_flight_invariants_property(m, K, seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(K, m))
    p0 = rng.uniform(0.0, 1.0, m)
    problem = BalancingProblem(p0=p0, constraints=A)
    p = flight_phase(problem, RandomStream(seed, 9))
    assert np.all((p >= 0.0) & (p <= 1.0))
    frac = (p > 0.0) & (p < 1.0)
    assert frac.sum() <= K
    # cells integral at the start never move
    fixed = (p0 == 0.0) | (p0 == 1.0)
    assert np.array_equal(p[fixed], p0[fixed])
    if K:
        assert np.max(np.abs(A @ (p - p0))) <= 1e-9 * (np.linalg.norm(A) + 1.0)
