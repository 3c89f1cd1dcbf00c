import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import expit

from zimpute.frames import PopulationFrame, RandomStream, SampleFrame, build_population
from zimpute.model import (
    ConvergenceError,
    EigenClampSolver,
    PhiModel,
    PoolError,
    SeparationError,
    build_residual_pool,
    fit_phi,
    fit_regression,
    weighted_logistic_fit,
)
from conftest import make_mixture_sample


def _sample_from(y, u=None, r=None, omega=None, z=None, v=None):
    n = len(y)
    z = np.ones((n, 1)) if z is None else np.asarray(z, dtype=float)
    u = np.ones((n, 1)) if u is None else np.asarray(u, dtype=float)
    v = np.ones(n) if v is None else np.asarray(v, dtype=float)
    pop = build_population(y=y, z=z, u=u, v=v)
    return SampleFrame.from_members(pop, np.arange(n), np.full(n, 0.5),
                                    omega=omega, r=r)


# --- logistic fit -----------------------------------------------------------

def test_intercept_only_balanced_classes():
    s = _sample_from([0.0, 0.0, 1.0, 2.0])
    model = fit_phi(s)
    assert model.gamma_hat == pytest.approx([0.0], abs=1e-8)
    assert np.allclose(model.phi_hat, 0.5, atol=1e-8)
    assert model.converged


def test_intercept_only_closed_form():
    # respondent nonzero share 0.75: the fit is the logit of the mean
    s = _sample_from([0.0, 1.0, 2.0, 3.0])
    model = fit_phi(s)
    assert model.gamma_hat == pytest.approx([np.log(3.0)], abs=1e-7)
    assert np.allclose(model.phi_hat, 0.75, atol=1e-7)


def test_perfect_separation_raises():
    x = np.array([-2.0, -1.0, -0.5, 0.5, 1.0, 2.0])
    u = np.column_stack([np.ones(6), x])
    y = np.where(x > 0, 1.0, 0.0)
    s = _sample_from(y, u=u)
    with pytest.raises(SeparationError, match="separation"):
        fit_phi(s)


def test_phi_computed_for_nonrespondents_too():
    r = np.array([1, 1, 1, 1, 0, 0])
    s = _sample_from([0.0, 1.0, 0.0, 2.0, 0.0, 0.0], r=r)
    model = fit_phi(s)
    assert model.phi_hat.shape == (6,)
    assert np.all((model.phi_hat > 0.0) & (model.phi_hat < 1.0))


def _grid_oracle(u, yb, w, lo=-6.0, hi=6.0):
    """Independent maximizer of the weighted likelihood by nested grid search."""
    q = u.shape[1]

    def loglik(points):
        lp = u @ points  # (n, G)
        return np.sum(w[:, None] * (yb[:, None] * lp - np.logaddexp(0.0, lp)), axis=0)

    center = np.zeros(q)
    width = hi - lo
    for _ in range(5):
        axes = [np.linspace(c - width / 2, c + width / 2, 61) for c in center]
        grids = np.meshgrid(*axes, indexing="ij")
        points = np.stack([grd.ravel() for grd in grids])
        vals = loglik(points)
        best = int(np.argmax(vals))
        center = points[:, best]
        width = width / 15.0
    return center


def test_fit_matches_grid_oracle_q1():
    rng = RandomStream(31).generator()
    for trial in range(4):
        n_r = int(rng.integers(4, 9))
        u = np.ones((n_r, 1))
        yb = rng.integers(0, 2, n_r).astype(float)
        if yb.min() == yb.max():
            yb[0] = 1.0 - yb[0]
        w = rng.uniform(0.5, 2.0, n_r)
        gamma, _ = weighted_logistic_fit(u, yb, w)
        oracle = _grid_oracle(u, yb, w)
        assert np.max(np.abs(gamma - oracle)) <= 1e-4


def test_fit_matches_grid_oracle_q2():
    rng = RandomStream(77).generator()
    for trial in range(3):
        n_r = 8
        x = rng.uniform(-1.0, 1.0, n_r)
        u = np.column_stack([np.ones(n_r), x])
        # generate labels with enough overlap that the optimum is interior
        yb = (rng.random(n_r) < expit(0.3 + 0.8 * x)).astype(float)
        if yb.min() == yb.max():
            yb[0] = 1.0 - yb[0]
        w = rng.uniform(0.5, 2.0, n_r)
        try:
            gamma, _ = weighted_logistic_fit(u, yb, w)
        except SeparationError:
            continue
        if np.max(np.abs(gamma)) > 4.0:
            continue  # optimum too close to the grid edge for the oracle
        oracle = _grid_oracle(u, yb, w)
        assert np.max(np.abs(gamma - oracle)) <= 1e-4


# --- regularized regression ---------------------------------------------------

def test_coefficient_hand_example():
    # one column, unit variance, equal weight: the coefficient is the
    # respondent mean when no eigenvalue falls below the threshold
    s = _sample_from([0.0, 2.0, 4.0], r=[1, 1, 1])
    phi = PhiModel(gamma_hat=np.zeros(1), phi_hat=np.ones(3), converged=True, iterations=0)
    fit = fit_regression(s, phi, threshold=0.05)
    # G = n_r / N = 1 >= a, so no clamping
    assert not fit.regularization_active
    assert fit.beta_hat == pytest.approx([2.0], abs=1e-12)


def test_clamp_rule():
    s = _sample_from([0.0, 2.0, 4.0])
    phi = PhiModel(gamma_hat=np.zeros(1), phi_hat=np.full(3, 0.01), converged=True,
                   iterations=0)
    fit = fit_regression(s, phi, threshold=0.05)
    # G = mean(omega r phi z^2) = 0.01 < 0.05: clamped
    assert fit.regularization_active
    assert np.allclose(fit.g_hat, [[0.01]])
    assert np.allclose(fit.g_reg, [[0.05]])


def test_regularized_inverse_norm_bound():
    rng = RandomStream(5).generator()
    n = 20
    z = np.column_stack([np.ones(n), rng.normal(size=n), rng.normal(size=n)])
    z[:, 2] = z[:, 1]  # exactly collinear: Gram matrix is singular
    y = rng.normal(size=n)
    s = _sample_from(y, z=z)
    phi = PhiModel(gamma_hat=np.zeros(1), phi_hat=np.full(n, 0.5), converged=True,
                   iterations=0)
    a = 0.05
    fit = fit_regression(s, phi, threshold=a)
    assert fit.regularization_active
    assert np.all(np.isfinite(fit.beta_hat))
    inv = np.linalg.inv(fit.g_reg)
    assert np.linalg.norm(inv, 2) <= 1.0 / a + 1e-9


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=1, max_value=5), st.integers(min_value=0, max_value=10_000))
def test_clamp_idempotence(dim, seed):
    rng = np.random.default_rng(seed)
    m = rng.normal(size=(dim, dim))
    sym = m @ m.T - 0.4 * np.eye(dim)  # possibly indefinite
    a = 0.05
    once = EigenClampSolver(sym, a)
    twice = EigenClampSolver(once.matrix(), a)
    assert np.allclose(once.matrix(), twice.matrix(), atol=1e-10)
    assert not np.any(twice.eigenvalues < -1e-12)


# --- residual pool --------------------------------------------------------------

def _fitted(s, phi_vals):
    phi = PhiModel(gamma_hat=np.zeros(1), phi_hat=np.asarray(phi_vals, dtype=float),
                   converged=True, iterations=0)
    return phi, fit_regression(s, phi, threshold=0.05)


def test_pool_equal_weights():
    s = _sample_from([0.0, 2.0, 4.0, 6.0])
    phi, fit = _fitted(s, np.ones(4))
    pool = build_residual_pool(s, fit)
    assert np.array_equal(pool.donor_idx, [1, 2, 3])
    assert np.allclose(pool.probs, 1.0 / 3.0)


def test_pool_single_donor():
    s = _sample_from([0.0, 3.5], r=[1, 1])
    phi, fit = _fitted(s, np.ones(2))
    pool = build_residual_pool(s, fit)
    # single donor: its residual is the pool mean, variance zero
    assert pool.residuals.shape == (1,)
    assert pool.mean == pytest.approx(pool.residuals[0])
    assert pool.var == 0.0


def test_pool_symmetric_residuals():
    # donors with residuals (-1, +1) around the fitted value 2
    s = _sample_from([1.0, 3.0])
    phi, fit = _fitted(s, np.ones(2))
    pool = build_residual_pool(s, fit)
    assert pool.mean == pytest.approx(0.0, abs=1e-12)
    assert pool.var == pytest.approx(1.0, abs=1e-12)
    assert sorted(pool.residuals) == pytest.approx([-1.0, 1.0])


def test_empty_pool_raises():
    s = _sample_from([0.0, 0.0, 5.0], r=[1, 1, 0])
    phi, fit = _fitted(s, np.full(3, 0.5))
    with pytest.raises(PoolError, match="empty donor pool"):
        build_residual_pool(s, fit)


def test_residual_centering_under_full_nonzero_response():
    # intercept in z, all phi = 1, uniform weights, no observed zeros: the
    # pool mean is the least-squares residual mean, which is exactly zero
    rng = RandomStream(13).generator()
    n = 40
    x = rng.uniform(0.0, 2.0, n)
    z = np.column_stack([np.ones(n), x])
    y = 3.0 + 2.0 * x + rng.normal(size=n)
    assert np.all(y != 0.0)
    s = _sample_from(y, z=z)
    phi, fit = _fitted(s, np.ones(n))
    pool = build_residual_pool(s, fit)
    assert abs(pool.residuals.mean()) <= 1e-10


def test_fit_phi_on_mixture_sample_recovers_shape():
    s = make_mixture_sample(seed=3, n=400)
    model = fit_phi(s)
    fit = fit_regression(s, model, threshold=0.05)
    assert not fit.regularization_active
    # slope/intercept in the right region (weak check; consistency is tested
    # at scale in the acceptance suite)
    assert fit.beta_hat[0] == pytest.approx(10.0, abs=2.5)
    assert fit.beta_hat[1] == pytest.approx(2.0, abs=1.2)
