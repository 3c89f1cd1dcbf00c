import numpy as np
import pytest
from scipy.stats import ks_2samp

from zimpute.frames import RandomStream, SampleFrame, build_population
from zimpute.impute import (
    METHODS,
    completed_values,
    impute,
    impute_bmrr,
    impute_brr,
    impute_mrr,
    impute_rr,
    imputed_cdf,
    imputed_total,
)
from zimpute.design import hajek_cdf, ht_total
from zimpute.model import PhiModel, build_residual_pool, fit_phi, fit_regression
from conftest import make_mixture_sample


def _fitted_sample(seed=11, n=260, respond=0.55):
    sample = make_mixture_sample(seed=seed, n=n, respond=respond)
    phi = fit_phi(sample)
    fit = fit_regression(sample, phi, threshold=0.05)
    pool = build_residual_pool(sample, fit)
    return sample, phi, fit, pool


def _with_phi(sample, value):
    return PhiModel(gamma_hat=np.zeros(sample.u.shape[1]),
                    phi_hat=np.full(sample.n, value), converged=True, iterations=0)


# --- per-method examples ------------------------------------------------------

def test_rr_degenerate_probabilities():
    sample, phi, fit, pool = _fitted_sample()
    zeros = impute_rr(sample, _with_phi(sample, 0.0), fit, RandomStream(1))
    nr = sample.r == 0
    assert np.all(zeros.y_star[nr] == 0.0)
    ones = impute_rr(sample, _with_phi(sample, 1.0), fit, RandomStream(2))
    pred = sample.z[nr] @ fit.beta_hat
    assert np.allclose(ones.y_star[nr], pred)


def test_rr_monte_carlo_mean():
    sample, phi, fit, pool = _fitted_sample()
    nr = np.flatnonzero(sample.r == 0)
    g = RandomStream(3).generator()
    reps = 10_000
    acc = np.zeros(nr.size)
    for _ in range(reps):
        res = impute_rr(sample, phi, fit, g)
        acc += res.y_star[nr]
    pred = sample.z[nr] @ fit.beta_hat
    expected = phi.phi_hat[nr] * pred
    sd = np.abs(pred) * np.sqrt(phi.phi_hat[nr] * (1 - phi.phi_hat[nr]) / reps)
    assert np.all(np.abs(acc / reps - expected) <= 4 * sd + 1e-9)


def test_brr_equals_rr_when_probabilities_are_one():
    sample, phi, fit, pool = _fitted_sample()
    one = _with_phi(sample, 1.0)
    a = impute_rr(sample, one, fit, RandomStream(5))
    b = impute_brr(sample, one, fit, RandomStream(6))
    nr = sample.r == 0
    assert np.array_equal(a.y_star[nr], b.y_star[nr])
    assert np.array_equal(a.eta_star[nr], b.eta_star[nr])


def test_brr_matches_rr_mean_but_kills_imputation_variance():
    sample, phi, fit, pool = _fitted_sample()
    g = RandomStream(7).generator()
    reps = 2000
    t_rr = np.empty(reps)
    t_brr = np.empty(reps)
    for k in range(reps):
        t_rr[k] = imputed_total(sample, impute_rr(sample, phi, fit, g))
        t_brr[k] = imputed_total(sample, impute_brr(sample, phi, fit, g))
    se = t_rr.std(ddof=1) / np.sqrt(reps) + t_brr.std(ddof=1) / np.sqrt(reps)
    assert abs(t_rr.mean() - t_brr.mean()) <= 4 * se
    assert t_brr.var(ddof=1) <= 0.05 * t_rr.var(ddof=1)


def test_mrr_single_zero_residual_donor():
    sample, phi, fit, _ = _fitted_sample()
    pool0 = build_residual_pool(sample, fit)
    from zimpute.model import ResidualPool
    pool = ResidualPool(donor_idx=pool0.donor_idx[:1], residuals=np.zeros(1),
                        probs=np.ones(1), mean=0.0, var=0.0)
    res = impute_mrr(sample, _with_phi(sample, 1.0), fit, pool, RandomStream(8))
    nr = sample.r == 0
    assert np.allclose(res.y_star[nr], sample.z[nr] @ fit.beta_hat)


def test_mrr_mean_matches_closed_form():
    sample, phi, fit, pool = _fitted_sample()
    nr = np.flatnonzero(sample.r == 0)
    g = RandomStream(9).generator()
    reps = 10_000
    acc = np.zeros(nr.size)
    for _ in range(reps):
        acc += impute_mrr(sample, phi, fit, pool, g).y_star[nr]
    pred = sample.z[nr] @ fit.beta_hat
    expected = phi.phi_hat[nr] * (pred + np.sqrt(sample.v[nr]) * pool.mean)
    spread = np.sqrt((pred ** 2 + pool.var + 4.0) / reps)
    assert np.all(np.abs(acc / reps - expected) <= 5 * spread)


def test_mrr_two_donor_enumeration():
    n = 4
    pop = build_population(y=[2.0, 4.0, 0.0, 0.0], z=np.ones((n, 1)),
                           u=np.ones((n, 1)), v=np.ones(n))
    sample = SampleFrame.from_members(pop, np.arange(n), np.full(n, 0.5),
                                      r=[1, 1, 0, 0])
    phi = _with_phi(sample, 1.0)
    fit = fit_regression(sample, phi, threshold=0.05)
    pool = build_residual_pool(sample, fit)
    assert sorted(pool.residuals) == pytest.approx([-1.0, 1.0])
    g = RandomStream(10).generator()
    reps = 8000
    vals = np.empty(reps)
    for k in range(reps):
        vals[k] = impute_mrr(sample, phi, fit, pool, g).y_star[3]
    pred = float(sample.z[3] @ fit.beta_hat)
    lo, hi = pred - 1.0, pred + 1.0
    assert set(np.round(np.unique(vals), 12)) <= {round(lo, 12), round(hi, 12)}
    assert abs(np.mean(vals == hi) - 0.5) <= 3 * np.sqrt(0.25 / reps)


def test_bmrr_empty_nonrespondents():
    sample = make_mixture_sample(seed=21, n=50, respond=1.1)  # all respond
    phi = fit_phi(sample)
    fit = fit_regression(sample, phi, threshold=0.05)
    pool = build_residual_pool(sample, fit)
    res = impute_bmrr(sample, phi, fit, pool, RandomStream(0))
    assert np.all(np.isnan(res.y_star))
    assert imputed_total(sample, res) == pytest.approx(ht_total(sample, sample.y))


def test_bmrr_marginals_match_mrr_by_ks():
    sample, phi, fit, pool = _fitted_sample(seed=29, n=120, respond=0.6)
    nr = np.flatnonzero(sample.r == 0)[:4]
    g = RandomStream(30).generator()
    reps = 10_000
    mrr_vals = np.empty((reps, nr.size))
    bmrr_vals = np.empty((reps, nr.size))
    for k in range(reps):
        mrr_vals[k] = impute_mrr(sample, phi, fit, pool, g).y_star[nr]
        bmrr_vals[k] = impute_bmrr(sample, phi, fit, pool, g).y_star[nr]
    for j in range(nr.size):
        stat = ks_2samp(mrr_vals[:, j], bmrr_vals[:, j])
        assert stat.pvalue > 0.01


def test_bmrr_kills_imputation_variance_of_total():
    sample, phi, fit, pool = _fitted_sample(seed=31, n=300, respond=0.55)
    g = RandomStream(33).generator()
    reps = 2000
    t_mrr = np.empty(reps)
    t_bmrr = np.empty(reps)
    for k in range(reps):
        t_mrr[k] = imputed_total(sample, impute_mrr(sample, phi, fit, pool, g))
        t_bmrr[k] = imputed_total(sample, impute_bmrr(sample, phi, fit, pool, g))
    assert t_bmrr.var(ddof=1) <= 0.05 * t_mrr.var(ddof=1)
    se = (t_mrr.std(ddof=1) + t_bmrr.std(ddof=1)) / np.sqrt(reps)
    assert abs(t_mrr.mean() - t_bmrr.mean()) <= 4 * se


# --- zero structure and estimators ----------------------------------------------

@pytest.mark.parametrize("method", METHODS)
def test_zero_structure(method):
    sample, phi, fit, pool = _fitted_sample(seed=37)
    res = impute(method, sample, phi, fit, pool, RandomStream(40))
    nr = sample.r == 0
    eta = res.eta_star[nr]
    y = res.y_star[nr]
    assert np.all((eta == 0.0) == (y == 0.0))
    if method in ("MRR", "BMRR"):
        has_donor = res.donor[nr] >= 0
        assert np.array_equal(has_donor, eta == 1.0)


def test_imputed_total_examples():
    pop = build_population(y=[3.0, 1.0], z=np.ones((2, 1)), u=np.ones((2, 1)),
                           v=np.ones(2))
    sample = SampleFrame.from_members(pop, [0, 1], [0.5, 0.5], r=[1, 0])
    from zimpute.impute import ImputationResult
    res = ImputationResult("MRR", np.array([np.nan, 5.0]), np.array([np.nan, 1.0]),
                           np.array([-1, 0]))
    assert imputed_total(sample, res) == pytest.approx(16.0)
    zeros = ImputationResult("RR", np.array([np.nan, 0.0]), np.array([np.nan, 0.0]),
                             np.array([-1, -1]))
    assert imputed_total(sample, zeros) == pytest.approx(6.0)


def test_imputed_total_full_response_equals_ht():
    sample = make_mixture_sample(seed=41, n=80, respond=1.1)
    phi = fit_phi(sample)
    fit = fit_regression(sample, phi, threshold=0.05)
    res = impute_rr(sample, phi, fit, RandomStream(1))
    assert imputed_total(sample, res) == pytest.approx(ht_total(sample, sample.y))


def test_imputed_cdf_examples():
    pop = build_population(y=[2.0, 9.0], z=np.ones((2, 1)), u=np.ones((2, 1)),
                           v=np.ones(2))
    sample = SampleFrame.from_members(pop, [0, 1], [1.0, 1.0], r=[1, 0])
    from zimpute.impute import ImputationResult
    res = ImputationResult("MRR", np.array([np.nan, 7.0]), np.array([np.nan, 1.0]),
                           np.array([-1, 0]))
    assert imputed_cdf(sample, res, 5.0) == pytest.approx(0.5)
    assert imputed_cdf(sample, res, 1e9) == pytest.approx(1.0)
    assert imputed_cdf(sample, res, -1.0) == 0.0


def test_imputed_cdf_full_response_equals_hajek():
    sample = make_mixture_sample(seed=43, n=90, respond=1.1)
    phi = fit_phi(sample)
    fit = fit_regression(sample, phi, threshold=0.05)
    res = impute_rr(sample, phi, fit, RandomStream(2))
    for t in (0.0, 8.0, 15.0):
        assert imputed_cdf(sample, res, t) == pytest.approx(hajek_cdf(sample, sample.y, t))


def test_determinism_per_stream():
    sample, phi, fit, pool = _fitted_sample(seed=47)
    a = impute_bmrr(sample, phi, fit, pool, RandomStream(99, 3))
    b = impute_bmrr(sample, phi, fit, pool, RandomStream(99, 3))
    assert np.array_equal(a.y_star[sample.r == 0], b.y_star[sample.r == 0])
    assert a.seed_record == (99, 3)
    c = impute_bmrr(sample, phi, fit, pool, RandomStream(99, 4))
    assert not np.array_equal(a.y_star[sample.r == 0], c.y_star[sample.r == 0])


def test_respondents_never_touched():
    sample, phi, fit, pool = _fitted_sample(seed=53)
    res = impute_bmrr(sample, phi, fit, pool, RandomStream(3))
    resp = sample.r == 1
    assert np.all(np.isnan(res.y_star[resp]))
    y_completed, eta_star, donor = completed_values(sample, res)
    assert np.array_equal(y_completed[resp], sample.y[resp])
    assert np.all(donor[resp] == -1)
