"""Synthetic-population generators and the Monte Carlo laboratory.

Populations follow the mixture generator: four Gamma covariates, a logistic
nonzero-probability model with the intercept calibrated to a target nonzero
share, a linear regression branch whose residual variance is solved from a
target in-branch R^2, and a logistic response mechanism calibrated to a
target respondent share. The runner draws size-conditioned Poisson samples
with probabilities proportional to the first covariate, fits, imputes with
every configured mechanism from the same fit, and aggregates relative bias,
MSE, relative efficiency against the balanced donor mechanism, and (when
variance estimation is on) variance-estimator bias and interval coverage.

A second scenario mimics a stratified business survey: within-stratum
imputation cells cut by the rank of a size measure, uniform-within-stratum
response, cell-mean mixture imputation per stratum, and a with-replacement
bootstrap comparing the balanced and unbalanced donor mechanisms.
"""

from __future__ import annotations

import csv
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy.special import expit

from .design import (
    DesignSpec,
    POISSON_REJECTIVE,
    STRATIFIED_SRS,
    draw_sample,
    inclusion_probabilities,
    population_quantile,
)
from .frames import PopulationFrame, RandomStream, SampleFrame, as_generator, build_population
from .impute import METHODS, impute, imputed_cdf, imputed_total
from .model import (
    ConvergenceError,
    PhiModel,
    build_residual_pool,
    fit_phi,
    fit_regression,
    weighted_logistic_fit,
)
from .variance import bootstrap_variance, linearized_components, total_variance

__all__ = [
    "ScenarioConfig",
    "MonteCarloTable",
    "TableRow",
    "ApplicationConfig",
    "ApplicationReport",
    "calibrate_intercept",
    "generate_population",
    "generate_response",
    "run_monte_carlo",
    "run_application_scenario",
]

COVARIATE_SHAPE = 2.0
COVARIATE_SCALE = 5.0

_LP_CAP = 36.0


@dataclass(frozen=True)
class ScenarioConfig:
    """One cell of the simulation grid.

    ``r2`` fixes the residual variance through the in-branch coefficient of
    determination; ``phi_bar`` / ``p_bar`` are the calibration targets of the
    nonzero and response shares. Slopes of the two logistic models are free
    parameters of the generator (only their intercepts are calibrated).
    """

    n_population: int = 10_000
    n_sample: int = 500
    replicates: int = 500
    intercept: float = 30.0
    slopes: tuple = (0.7, 0.7, 0.7, 0.7)
    r2: float = 0.5
    phi_bar: float = 0.7
    p_bar: float = 0.5
    phi_slopes: tuple = (0.05, 0.05, 0.05, 0.05)
    response_slopes: tuple = (0.05, 0.05, 0.05, 0.05)
    residual_family: str = "normal"
    quantiles: tuple = (0.5, 0.75, 0.9)
    methods: tuple = METHODS
    # with unit imputation weights the Gram matrix scales like n/N, so the
    # clamp must sit below its spectrum (the inverse-norm bound on the
    # population matrix): smallest eigenvalue ~2e-3 * (n/500) on this
    # generator; 1e-4 stays inactive down to n = 250
    reg_threshold: float = 1e-4
    estimate_variance: bool = False
    master_seed: int = 20240817
    workers: int = 1

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError("need at least one replicate")
        if not 0.0 < self.r2 < 1.0:
            raise ValueError("r2 must lie in (0, 1)")
        if self.residual_family not in ("normal", "gamma", "lognormal"):
            raise ValueError(f"unknown residual family {self.residual_family!r}")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ValueError(f"unknown methods {bad}")


def calibrate_intercept(target: float, slopes, covariates, kind: str = "phi",
                        weights=None, tol: float = 1e-3) -> float:
    """Bisect the logistic intercept so the (weighted) mean probability hits target."""
    if not 0.0 < target < 1.0:
        raise ValueError(f"{kind} calibration target must lie in (0, 1)")
    cov = np.asarray(covariates, dtype=np.float64)
    s = cov @ np.asarray(slopes, dtype=np.float64)
    if weights is None:
        w = np.full(s.shape[0], 1.0 / s.shape[0])
    else:
        w = np.asarray(weights, dtype=np.float64)
        w = w / w.sum()

    def mean_prob(b0):
        return float(np.sum(w * expit(np.clip(b0 + s, -_LP_CAP, _LP_CAP))))

    center = float(np.log(target / (1.0 - target)))
    span = float(np.max(s) - np.min(s)) + 1.0
    lo, hi = center - span, center + span
    while mean_prob(lo) > target:
        lo -= span
    while mean_prob(hi) < target:
        hi += span
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mean_prob(mid) < target:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-12:
            break
    b0 = 0.5 * (lo + hi)
    if abs(mean_prob(b0) - target) > tol:
        raise RuntimeError(f"{kind} intercept calibration missed the target")
    return b0


def _draw_residuals(g, family: str, sigma2: float, size: int) -> np.ndarray:
    """Centered residuals with variance sigma2 from the configured family."""
    sigma = float(np.sqrt(sigma2))
    if family == "normal":
        return g.normal(0.0, sigma, size)
    if family == "gamma":
        scale = sigma / np.sqrt(2.0)
        return g.gamma(2.0, scale, size) - 2.0 * scale
    # lognormal: mu = 0, variance matched through exp(tau^2)
    x = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * sigma2))
    tau = float(np.sqrt(np.log(x)))
    return g.lognormal(0.0, tau, size) - np.sqrt(x)


def generate_population(config: ScenarioConfig, stream) -> PopulationFrame:
    """Draw one synthetic population from the mixture generator.

    The residual variance is solved on the realized covariates so that the
    regression of y on the covariates over the nonzero branch attains the
    configured R^2; the nonzero share is calibrated through the logistic
    intercept.
    """
    g = as_generator(stream)
    N = config.n_population
    zr = g.gamma(COVARIATE_SHAPE, COVARIATE_SCALE, size=(N, 4))
    b0 = calibrate_intercept(config.phi_bar, config.phi_slopes, zr, kind="phi")
    phi = expit(np.clip(b0 + zr @ np.asarray(config.phi_slopes), -_LP_CAP, _LP_CAP))
    eta = g.random(N) < phi
    lin = config.intercept + zr @ np.asarray(config.slopes)
    var_lin = float(lin[eta].var())
    if var_lin <= 0.0:
        raise RuntimeError("degenerate linear predictor: cannot reach the R^2 target")
    sigma2 = var_lin * (1.0 - config.r2) / config.r2
    eps = _draw_residuals(g, config.residual_family, sigma2, N)
    y = np.where(eta, lin + eps, 0.0)
    zu = np.column_stack([np.ones(N), zr])
    return build_population(y=y, z=zu, u=zu, v=np.ones(N))


def generate_response(sample: SampleFrame, c_coefficients, stream) -> SampleFrame:
    """Independent Bernoulli response with a logistic mean on the u covariates."""
    g = as_generator(stream)
    c = np.asarray(c_coefficients, dtype=np.float64)
    p = expit(np.clip(sample.u @ c, -_LP_CAP, _LP_CAP))
    r = (g.random(sample.n) < p).astype(np.int64)
    return sample.with_response(r)


# ---------------------------------------------------------------------------
# Monte Carlo runner
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TableRow:
    method: str
    estimand: str
    rb_pct: float
    mse: float
    re_vs_bmrr: Optional[float]
    coverage: Optional[float] = None
    variance_rb_pct: Optional[float] = None


@dataclass(frozen=True)
class MonteCarloTable:
    """Aggregated results of one scenario cell."""

    r2: float
    phi_bar: float
    p_bar: float
    replicates: int
    failures: tuple
    rows: tuple

    def row(self, method: str, estimand: str) -> TableRow:
        for row in self.rows:
            if row.method == method and row.estimand == estimand:
                return row
        raise KeyError(f"no row for ({method}, {estimand})")

    def to_csv(self, path_or_buf) -> None:
        close = False
        if isinstance(path_or_buf, (str, bytes)):
            handle = open(path_or_buf, "w", newline="")
            close = True
        else:
            handle = path_or_buf
        try:
            writer = csv.writer(handle)
            writer.writerow(["r2", "phi_bar", "p_bar", "method", "estimand",
                             "rb_pct", "mse", "re_vs_bmrr", "coverage",
                             "variance_rb_pct"])
            for row in self.rows:
                writer.writerow([
                    f"{self.r2:.17g}", f"{self.phi_bar:.17g}", f"{self.p_bar:.17g}",
                    row.method, row.estimand,
                    f"{row.rb_pct:.17g}", f"{row.mse:.17g}",
                    "" if row.re_vs_bmrr is None else f"{row.re_vs_bmrr:.17g}",
                    "" if row.coverage is None else f"{row.coverage:.17g}",
                    "" if row.variance_rb_pct is None else f"{row.variance_rb_pct:.17g}",
                ])
        finally:
            if close:
                handle.close()

    def to_text(self) -> str:
        """Aligned rendering: one block per estimand, one row per method."""
        out = io.StringIO()
        out.write(f"scenario: R2={self.r2:g} phi_bar={self.phi_bar:g} "
                  f"p_bar={self.p_bar:g} replicates={self.replicates}\n")
        if self.failures:
            out.write(f"failed replicates: {list(self.failures)}\n")
        estimands = []
        for row in self.rows:
            if row.estimand not in estimands:
                estimands.append(row.estimand)
        for est in estimands:
            out.write(f"\n{est}\n")
            out.write(f"{'method':<8}{'RB %':>10}{'RE':>8}")
            rows = [r for r in self.rows if r.estimand == est]
            with_cov = any(r.coverage is not None for r in rows)
            if with_cov:
                out.write(f"{'V RB %':>10}{'Cov %':>8}")
            out.write("\n")
            for r in rows:
                re_txt = "" if r.re_vs_bmrr is None else f"{r.re_vs_bmrr:8.2f}"
                out.write(f"{r.method:<8}{r.rb_pct:10.2f}{re_txt:>8}")
                if with_cov:
                    vr = "" if r.variance_rb_pct is None else f"{r.variance_rb_pct:10.1f}"
                    cv = "" if r.coverage is None else f"{100 * r.coverage:8.1f}"
                    out.write(f"{vr:>10}{cv:>8}")
                out.write("\n")
        return out.getvalue()


@dataclass(frozen=True)
class _ReplicateRecord:
    totals: dict
    cdfs: dict
    variance: dict
    p_hat_mean: float


def _ordered_methods(config: ScenarioConfig) -> tuple:
    return tuple(m for m in METHODS if m in config.methods)


@lru_cache(maxsize=4)
def _scenario_setup(config: ScenarioConfig):
    """Population, inclusion probabilities, response coefficients, truths."""
    root = RandomStream(config.master_seed)
    pop = generate_population(config, root.substream(0))
    spec = DesignSpec(POISSON_REJECTIVE, config.n_sample,
                      size_measure=pop.z[:, 1])
    pi = inclusion_probabilities(pop, spec)
    c0 = calibrate_intercept(config.p_bar, config.response_slopes, pop.z[:, 1:],
                             kind="response", weights=pi)
    c_full = np.concatenate([[c0], np.asarray(config.response_slopes)])
    t_y = float(pop.y.sum())
    t_alpha = {a: population_quantile(pop, a) for a in config.quantiles}
    f_true = {a: float(np.mean(pop.y <= t_alpha[a])) for a in config.quantiles}
    return pop, spec, pi, c_full, t_y, t_alpha, f_true


def _run_replicate(config: ScenarioConfig, k: int) -> _ReplicateRecord:
    pop, spec, pi, c_full, t_y, t_alpha, _ = _scenario_setup(config)
    root = RandomStream(config.master_seed)
    g = root.substream(k + 1).generator()
    sample = draw_sample(pop, spec, g, pi=pi)
    sample = generate_response(sample, c_full, g)

    # response-model fit: reported as a diagnostic, unused by the estimators
    try:
        c_gamma, _ = weighted_logistic_fit(sample.u, sample.r.astype(float), sample.omega)
        p_hat_mean = float(np.mean(expit(np.clip(sample.u @ c_gamma, -_LP_CAP, _LP_CAP))))
    except ConvergenceError:
        p_hat_mean = float("nan")

    phi = fit_phi(sample)
    fit = fit_regression(sample, phi, config.reg_threshold)
    pool = build_residual_pool(sample, fit)

    totals, cdfs, var = {}, {}, {}
    for method in _ordered_methods(config):
        res = impute(method, sample, phi, fit, pool, g)
        totals[method] = imputed_total(sample, res)
        cdfs[method] = {a: imputed_cdf(sample, res, t_alpha[a]) for a in config.quantiles}
        if config.estimate_variance and method in ("MRR", "BMRR"):
            comps = linearized_components(sample, phi, fit, res)
            report = total_variance(method, comps, sample, spec)
            covered = report.ci_lower <= t_y <= report.ci_upper
            var[method] = (report.total, bool(covered))
    return _ReplicateRecord(totals=totals, cdfs=cdfs, variance=var, p_hat_mean=p_hat_mean)


def _replicate_task(args):
    config, k = args
    return k, _run_replicate(config, k)


def run_monte_carlo(config: ScenarioConfig) -> MonteCarloTable:
    """Run the scenario; aggregate RB / MSE / RE and variance diagnostics.

    Replicates are independent given their stream ids; with ``workers > 1``
    they run in a process pool and are folded in replicate order, so the
    table is identical for any worker count. Failing replicates are dropped
    and reported, but more than 1% of failures aborts the run.
    """
    pop, spec, pi, c_full, t_y, t_alpha, f_true = _scenario_setup(config)
    R = config.replicates
    records: list = [None] * R
    failures = []
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool_exec:
            for k, rec in pool_exec.map(_replicate_task,
                                        ((config, k) for k in range(R)),
                                        chunksize=max(1, R // (config.workers * 4))):
                records[k] = rec
    else:
        for k in range(R):
            try:
                records[k] = _run_replicate(config, k)
            except Exception as exc:  # noqa: BLE001 - replicate isolation
                failures.append((k, f"{type(exc).__name__}: {exc}"))
    if len(failures) > 0.01 * R:
        detail = "; ".join(f"replicate {k}: {msg}" for k, msg in failures[:10])
        raise RuntimeError(f"{len(failures)} of {R} replicates failed: {detail}")
    records = [rec for rec in records if rec is not None]
    if not records:
        raise RuntimeError("all replicates failed")

    methods = _ordered_methods(config)
    estimands = [("total", t_y)] + [(f"F({a:g})", f_true[a]) for a in config.quantiles]

    def series(method, estimand):
        if estimand == "total":
            return np.array([rec.totals[method] for rec in records])
        alpha = float(estimand[2:-1])
        return np.array([rec.cdfs[method][alpha] for rec in records])

    mse = {}
    for method in methods:
        for est, truth in estimands:
            vals = series(method, est)
            mse[(method, est)] = float(np.mean((vals - truth) ** 2))

    rows = []
    for method in methods:
        for est, truth in estimands:
            vals = series(method, est)
            rb = float(100.0 * np.mean((vals - truth) / truth))
            re = None
            if "BMRR" in methods:
                denom = mse[("BMRR", est)]
                re = float(mse[(method, est)] / denom) if denom > 0 else None
            coverage = None
            var_rb = None
            if est == "total" and config.estimate_variance and method in ("MRR", "BMRR"):
                pairs = [rec.variance[method] for rec in records if method in rec.variance]
                if pairs:
                    vhat = np.array([p[0] for p in pairs])
                    covered = np.array([p[1] for p in pairs])
                    coverage = float(np.mean(covered))
                    var_rb = float(100.0 * (np.mean(vhat) / mse[(method, est)] - 1.0))
            rows.append(TableRow(method=method, estimand=est, rb_pct=rb,
                                 mse=mse[(method, est)], re_vs_bmrr=re,
                                 coverage=coverage, variance_rb_pct=var_rb))
    return MonteCarloTable(r2=config.r2, phi_bar=config.phi_bar, p_bar=config.p_bar,
                           replicates=len(records), failures=tuple(failures),
                           rows=tuple(rows))


# ---------------------------------------------------------------------------
# Stratified application scenario
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ApplicationConfig:
    """Synthetic stratified business-survey scenario.

    Within-stratum imputation cells are cut by the rank of the size measure;
    response is uniform within strata. ``phi_covariates`` selects the
    covariates of the nonzero-probability logistic: the size variables (the
    survey-like default) or per-stratum indicators (exact cell-mean algebra).
    """

    stratum_sizes: tuple = (400, 800, 1500, 3000, 6000)
    stratum_sample_sizes: tuple = (60, 80, 100, 120, 140)
    cells_per_stratum: tuple = (3, 3, 3, 3, 3)
    response_rates: tuple = (0.75, 0.70, 0.70, 0.65, 0.60)
    size_scales: tuple = (50.0, 25.0, 12.0, 6.0, 3.0)
    bootstrap_replicates: int = 1000
    t_quantiles: tuple = (0.35, 0.5, 0.65, 0.8, 0.9, 0.95, 0.99)
    phi_covariates: str = "size-vars"
    reg_threshold: float = 0.05
    master_seed: int = 20240907

    def __post_init__(self):
        lens = {len(self.stratum_sizes), len(self.stratum_sample_sizes),
                len(self.cells_per_stratum), len(self.response_rates),
                len(self.size_scales)}
        if len(lens) != 1:
            raise ValueError("per-stratum settings must have equal lengths")
        if self.phi_covariates not in ("size-vars", "strata"):
            raise ValueError("phi_covariates must be 'size-vars' or 'strata'")


@dataclass(frozen=True)
class ApplicationReport:
    t_grid: tuple
    totals: dict
    cdf: dict
    v_boot: dict
    re: tuple
    estimand_names: tuple
    stratum_coefs: dict
    stratum_donor_means: tuple

    def to_text(self) -> str:
        out = io.StringIO()
        out.write(f"{'':8}{'total':>14}" + "".join(f"{f'F(t={t:.4g})':>14}" for t in self.t_grid) + "\n")
        for m in ("BMRR", "MRR"):
            vals = [self.totals[m]] + list(self.cdf[m])
            out.write(f"{m:<8}" + "".join(f"{vl:14.4f}" for vl in vals) + "\n")
        out.write(f"{'re':<8}" + "".join(f"{vl:14.2f}" for vl in self.re) + "\n")
        return out.getvalue()


def _cells_by_rank(values: np.ndarray, n_cells: int) -> np.ndarray:
    """Equal-count cell labels (0..n_cells-1) by the rank of ``values``."""
    order = np.argsort(values, kind="stable")
    labels = np.empty(values.shape[0], dtype=np.int64)
    labels[order] = (np.arange(values.shape[0]) * n_cells) // values.shape[0]
    return labels


def _generate_application_population(config: ApplicationConfig, stream):
    """Per-stratum population frames with cell-indicator model covariates."""
    g = as_generator(stream)
    pops = []
    n_strata = len(config.stratum_sizes)
    for h, (N_h, G_h, scale) in enumerate(zip(config.stratum_sizes,
                                              config.cells_per_stratum,
                                              config.size_scales)):
        z1 = scale * np.exp(g.normal(0.0, 0.4, N_h))
        z2 = 8.0 * z1 * np.exp(g.normal(0.0, 0.3, N_h))
        z3 = 12.0 * z1 * np.exp(g.normal(0.0, 0.35, N_h))
        phi = expit(0.3 + 0.9 * (np.log(z1) - np.log(scale)))
        eta = g.random(N_h) < phi
        y = np.where(eta, 5.0 * z2 + 2.0 * z1 * g.normal(0.0, 1.0, N_h), 0.0)
        cells = _cells_by_rank(z1, G_h)
        z = np.zeros((N_h, G_h))
        z[np.arange(N_h), cells] = 1.0
        if config.phi_covariates == "size-vars":
            u = np.column_stack([np.ones(N_h), z1, z2, z3])
        else:
            # per-stratum intercepts so the pooled fit balances inside strata
            u = np.zeros((N_h, n_strata))
            u[:, h] = 1.0
        pops.append(build_population(y=y, z=z, u=u, v=np.ones(N_h),
                                     stratum=np.full(N_h, h)))
    return pops


def _draw_application_sample(config: ApplicationConfig, pops, stream):
    """Stratified SRS with uniform-within-stratum response; omega = d."""
    g = as_generator(stream)
    samples = []
    for h, pop_h in enumerate(pops):
        spec = DesignSpec(STRATIFIED_SRS, config.stratum_sample_sizes[h])
        s_h = draw_sample(pop_h, spec, g)
        r = (g.random(s_h.n) < config.response_rates[h]).astype(np.int64)
        s_h = s_h.with_response(r)
        s_h = s_h.with_weights(d=s_h.d, omega=s_h.d)
        samples.append(s_h)
    return samples


def _fit_phi_pooled(samples, threshold_cap=100.0):
    """One logistic fit across strata; per-stratum probability slices."""
    u_all = np.vstack([s.u for s in samples])
    eta_all = np.concatenate([np.nan_to_num(s.eta) for s in samples])
    r_all = np.concatenate([s.r for s in samples])
    w_all = np.concatenate([s.omega for s in samples])
    resp = r_all == 1
    gamma, iters = weighted_logistic_fit(u_all[resp], eta_all[resp], w_all[resp],
                                         coef_cap=threshold_cap)
    out = []
    for s in samples:
        lp = np.clip(s.u @ gamma, -_LP_CAP, _LP_CAP)
        out.append(PhiModel(gamma_hat=gamma, phi_hat=expit(lp), converged=True,
                            iterations=iters))
    return out


def _application_estimates(config: ApplicationConfig, samples, t_grid, stream):
    """Fit per stratum, impute with both donor mechanisms, aggregate estimates.

    Returns ``(estimates, diagnostics)`` where estimates is the vector
    [t(BMRR), t(MRR), F_BMRR(t1..), F_MRR(t1..)].
    """
    g = as_generator(stream)
    phis = _fit_phi_pooled(samples)
    dsum = sum(float(np.sum(s.d)) for s in samples)
    totals = {"BMRR": 0.0, "MRR": 0.0}
    cdf_num = {"BMRR": np.zeros(len(t_grid)), "MRR": np.zeros(len(t_grid))}
    coefs, donor_means = {}, []
    for h, s_h in enumerate(samples):
        fit_h = fit_regression(s_h, phis[h], config.reg_threshold)
        pool_h = build_residual_pool(s_h, fit_h)
        coefs[h] = fit_h.beta_hat
        dw = pool_h.probs
        donor_means.append(float(np.sum(dw * s_h.y[pool_h.donor_idx])))
        for method in ("BMRR", "MRR"):
            res = impute(method, s_h, phis[h], fit_h, pool_h, g)
            totals[method] += imputed_total(s_h, res)
            for j, t in enumerate(t_grid):
                cdf_num[method][j] += imputed_cdf(s_h, res, t) * float(np.sum(s_h.d))
    cdf = {m: tuple(cdf_num[m] / dsum) for m in ("BMRR", "MRR")}
    estimates = np.concatenate([
        [totals["BMRR"], totals["MRR"]], cdf_num["BMRR"] / dsum, cdf_num["MRR"] / dsum,
    ])
    return estimates, {"totals": totals, "cdf": cdf, "coefs": coefs,
                       "donor_means": tuple(donor_means)}


def run_application_scenario(config: ApplicationConfig) -> ApplicationReport:
    """Stratified scenario: point estimates, bootstrap variances, efficiency.

    The efficiency row is the ratio of the bootstrap variances of the
    balanced donor mechanism over the unbalanced one, per estimand.
    """
    root = RandomStream(config.master_seed)
    pops = _generate_application_population(config, root.substream(0))
    samples = _draw_application_sample(config, pops, root.substream(1))

    y_all = np.concatenate([p.y for p in pops])
    ys = np.sort(y_all)
    t_grid = tuple(float(ys[max(int(np.ceil(q * ys.shape[0] - 1e-12)), 1) - 1])
                   for q in config.t_quantiles)

    estimates, diag = _application_estimates(config, samples, t_grid,
                                             root.substream(2))

    # combined frame representation for the with-replacement bootstrap
    combined_pop, combined_sample, offsets = _combine_strata(pops, samples)

    def pipeline(boot: SampleFrame, stream: RandomStream) -> np.ndarray:
        boot_samples = _split_strata(boot, pops, offsets)
        est, _ = _application_estimates(config, boot_samples, t_grid, stream)
        return est

    v_boot = bootstrap_variance(combined_sample, pipeline,
                                config.bootstrap_replicates, root.substream(3))
    v_boot = np.asarray(v_boot)
    k = len(t_grid)
    names = ("total",) + tuple(f"F(t={t:.6g})" for t in t_grid)
    v_bmrr = np.concatenate([[v_boot[0]], v_boot[2:2 + k]])
    v_mrr = np.concatenate([[v_boot[1]], v_boot[2 + k:2 + 2 * k]])
    re = tuple(float(a / b) if b > 0 else float("nan") for a, b in zip(v_bmrr, v_mrr))
    return ApplicationReport(
        t_grid=t_grid,
        totals=diag["totals"],
        cdf=diag["cdf"],
        v_boot={"BMRR": tuple(v_bmrr), "MRR": tuple(v_mrr)},
        re=re,
        estimand_names=names,
        stratum_coefs=diag["coefs"],
        stratum_donor_means=diag["donor_means"],
    )


def _combine_strata(pops, samples):
    """Stack per-stratum frames into one global frame (bootstrap plumbing)."""
    offsets = np.cumsum([0] + [p.n_units for p in pops])
    g_total = sum(p.n_z for p in pops)
    zs, col = [], 0
    for p in pops:
        block = np.zeros((p.n_units, g_total))
        block[:, col:col + p.n_z] = p.z
        zs.append(block)
        col += p.n_z
    u_all = np.vstack([p.u for p in pops])
    pop = build_population(
        y=np.concatenate([p.y for p in pops]),
        z=np.vstack(zs),
        u=u_all,
        v=np.concatenate([p.v for p in pops]),
        stratum=np.concatenate([p.stratum for p in pops]),
    )
    members = np.concatenate([s.members + offsets[h] for h, s in enumerate(samples)])
    sample = SampleFrame(
        parent=pop,
        members=members,
        pi=np.concatenate([s.pi for s in samples]),
        omega=np.concatenate([s.omega for s in samples]),
        r=np.concatenate([s.r for s in samples]),
        eta=np.concatenate([s.eta for s in samples]),
        d=np.concatenate([s.d for s in samples]),
    )
    return pop, sample, offsets


def _split_strata(combined: SampleFrame, pops, offsets):
    """Slice a combined (possibly bootstrap-reweighted) frame per stratum."""
    out = []
    labels = combined.stratum
    for h, pop_h in enumerate(pops):
        mask = labels == h
        if not np.any(mask):
            raise RuntimeError(f"bootstrap replicate lost stratum {h}")
        out.append(SampleFrame(
            parent=pop_h,
            members=combined.members[mask] - offsets[h],
            pi=combined.pi[mask],
            omega=combined.omega[mask],
            r=combined.r[mask],
            eta=combined.eta[mask],
            d=combined.d[mask],
        ))
    return out
