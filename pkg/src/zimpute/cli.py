"""Command-line front end: impute user data, run simulations, run the scenario.

Exit codes: 0 success, 2 input/config validation failure, 3 model
non-convergence. Every emitted artifact embeds the manifest hash and the
seed; re-running the same manifest reproduces the data artifacts byte for
byte (the run log additionally carries an informational timing line).
"""

from __future__ import annotations

import hashlib
import itertools
import json
import os
import sys
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import click
import numpy as np
import pandas as pd

from .design import DesignSpec, POISSON_REJECTIVE
from .frames import FrameError, RandomStream, SampleFrame, build_population
from .impute import METHODS, completed_values, impute, imputed_total
from .model import ConvergenceError, PoolError, build_residual_pool, fit_phi, fit_regression
from .simlab import ApplicationConfig, ScenarioConfig, run_application_scenario, run_monte_carlo
from .variance import linearized_components, total_variance

FULL_GRID_R2 = (0.4, 0.5, 0.6)
FULL_GRID_PHI = (0.6, 0.7, 0.8)
FULL_GRID_P = (0.3, 0.5, 0.7)


@dataclass(frozen=True)
class RunManifest:
    """What a run was asked to do; its hash stamps every artifact."""

    command: str
    inputs: tuple
    config: dict
    output_dir: str
    seed: int
    methods: tuple
    flags: dict

    def hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _stamp(manifest: RunManifest) -> str:
    return f"manifest={manifest.hash()} seed={manifest.seed}"


def _write_log(outdir: Path, manifest: RunManifest, lines, runtime_s: float):
    with open(outdir / "run.log", "w") as fh:
        fh.write(f"# {_stamp(manifest)}\n")
        for line in lines:
            fh.write(line + "\n")
        fh.write(f"runtime_seconds={runtime_s:.3f}\n")


@click.group()
def main():
    """Imputation for zero-inflated survey variables."""


# ---------------------------------------------------------------------------
# impute
# ---------------------------------------------------------------------------

_REQUIRED_COLUMNS = ("y", "v", "pi")


def _load_input_frame(path: str, add_intercept_z: bool, add_intercept_u: bool):
    try:
        df = pd.read_csv(path)
    except Exception as exc:
        _fail(2, f"cannot read {path}: {exc}")
    z_cols = sorted([c for c in df.columns if c.startswith("z_")],
                    key=lambda c: c[2:])
    u_cols = sorted([c for c in df.columns if c.startswith("u_")],
                    key=lambda c: c[2:])
    for col in _REQUIRED_COLUMNS:
        if col not in df.columns:
            _fail(2, f"missing column {col!r}")
    if not z_cols:
        _fail(2, "missing model covariates: no z_* columns")
    if not u_cols:
        _fail(2, "missing probability-model covariates: no u_* columns")
    for col in z_cols + u_cols + ["v", "pi"]:
        bad = df.index[df[col].isna()]
        if len(bad):
            _fail(2, f"column {col!r} has missing values at lines "
                     f"{[int(i) + 2 for i in bad[:5]]}")
    r = (~df["y"].isna()).astype(int).to_numpy()
    y = df["y"].fillna(0.0).to_numpy(dtype=float)
    try:
        pop = build_population(
            y=y,
            z=df[z_cols].to_numpy(dtype=float),
            u=df[u_cols].to_numpy(dtype=float),
            v=df["v"].to_numpy(dtype=float),
            stratum=df["stratum"].to_numpy(dtype=int) if "stratum" in df.columns else None,
            add_intercept_z=add_intercept_z,
            add_intercept_u=add_intercept_u,
        )
        omega = df["omega"].to_numpy(dtype=float) if "omega" in df.columns else None
        sample = SampleFrame.from_members(
            pop, np.arange(len(df)), df["pi"].to_numpy(dtype=float),
            omega=omega, r=r,
        )
    except FrameError as exc:
        _fail(2, str(exc))
    return df, sample


@main.command("impute")
@click.option("--input", "input_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--output-dir", required=True, type=click.Path(file_okay=False))
@click.option("--method", type=click.Choice(METHODS), default="MRR", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--reg-threshold", type=float, default=0.05, show_default=True,
              help="Eigenvalue clamp threshold of the regression fit.")
@click.option("--add-intercept-z/--no-add-intercept-z", default=False, show_default=True)
@click.option("--add-intercept-u/--no-add-intercept-u", default=False, show_default=True)
def cmd_impute(input_path, output_dir, method, seed, reg_threshold,
               add_intercept_z, add_intercept_u):
    """Impute missing y values in a CSV (blank y = missing; zeros are data).

    Expects columns: y, z_* model covariates, u_* probability-model
    covariates, v, pi, optional omega and stratum. Writes the imputed CSV, a
    variance report and a run log into the output directory.
    """
    t0 = time.monotonic()
    manifest = RunManifest(
        command="impute", inputs=(os.path.abspath(input_path),),
        config={"method": method, "reg_threshold": reg_threshold,
                "add_intercept_z": add_intercept_z, "add_intercept_u": add_intercept_u},
        output_dir=os.path.abspath(output_dir), seed=seed, methods=(method,),
        flags={},
    )
    outdir = Path(output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    df, sample = _load_input_frame(input_path, add_intercept_z, add_intercept_u)
    stream = RandomStream(seed)
    log_lines = [f"command=impute method={method} reg_threshold={reg_threshold:g}"]

    n_missing = int(np.sum(sample.r == 0))
    if n_missing == 0:
        out = df.copy()
        out["y_imputed"] = df["y"]
        out["eta_star"] = np.nan
        out["donor_index"] = -1
        out["method"] = method
        _write_csv(outdir / "imputed.csv", out, manifest)
        report = {"note": "no imputation performed (fully observed input)",
                  "manifest": manifest.hash(), "seed": seed}
        (outdir / "variance_report.json").write_text(json.dumps(report, indent=2, sort_keys=True))
        log_lines.append("no imputation performed")
        _write_log(outdir, manifest, log_lines, time.monotonic() - t0)
        click.echo("no imputation performed (fully observed input)")
        return

    try:
        phi = fit_phi(sample)
        fit = fit_regression(sample, phi, reg_threshold)
        pool = build_residual_pool(sample, fit)
        result = impute(method, sample, phi, fit, pool, stream)
    except (ConvergenceError,) as exc:
        _fail(3, f"model non-convergence: {exc}")
    except PoolError as exc:
        _fail(2, str(exc))

    y_completed, eta_star, donor = completed_values(sample, result)
    out = df.copy()
    out["y_imputed"] = y_completed
    out["eta_star"] = eta_star
    out["donor_index"] = donor
    out["method"] = method
    _write_csv(outdir / "imputed.csv", out, manifest)

    report = {"manifest": manifest.hash(), "seed": seed, "method": method,
              "imputed_total": imputed_total(sample, result),
              "n_missing": n_missing}
    if method in ("MRR", "BMRR"):
        comps = linearized_components(sample, phi, fit, result)
        vrep = total_variance(method, comps, sample,
                              DesignSpec(POISSON_REJECTIVE, sample.n))
        report.update({
            "variance_route": "hajek-rosen",
            "v_sampling": vrep.v1, "v_nonresponse": vrep.v2,
            "v_imputation": vrep.v3, "v_total": vrep.total,
            "ci_lower": vrep.ci_lower, "ci_upper": vrep.ci_upper,
        })
    else:
        report["note"] = "no variance estimator for this method"
    (outdir / "variance_report.json").write_text(json.dumps(report, indent=2, sort_keys=True))

    log_lines.append(f"n_missing={n_missing}")
    log_lines.append(f"phi_iterations={phi.iterations} converged={phi.converged}")
    log_lines.append(f"regularization_active={fit.regularization_active}")
    _write_log(outdir, manifest, log_lines, time.monotonic() - t0)
    click.echo(f"imputed {n_missing} values with {method}; outputs in {outdir}")


def _write_csv(path: Path, df: pd.DataFrame, manifest: RunManifest):
    with open(path, "w", newline="") as fh:
        fh.write(f"# {_stamp(manifest)}\n")
        df.to_csv(fh, index=False, float_format="%.17g")


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def _load_json_config(path):
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except Exception as exc:
        _fail(2, f"cannot read config {path}: {exc}")


@main.command("simulate")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--output-dir", required=True, type=click.Path(file_okay=False))
@click.option("--seed", type=int, default=None)
@click.option("--replicates", type=int, default=None)
@click.option("--method", "methods", multiple=True, type=click.Choice(METHODS))
@click.option("--reg-threshold", type=float, default=None)
@click.option("--full-grid", is_flag=True,
              help="Run the full nine-population grid at all three response rates.")
@click.option("--variance", "estimate_variance", is_flag=True)
@click.option("--workers", type=int, default=None,
              help="Process count for replicates (default ZIMPUTE_WORKERS or 1).")
def cmd_simulate(config_path, output_dir, seed, replicates, methods,
                 reg_threshold, full_grid, estimate_variance, workers):
    """Run Monte Carlo scenario cells; one table CSV per (R2, phi_bar, p_bar)."""
    t0 = time.monotonic()
    raw = _load_json_config(config_path)
    r2_list = tuple(raw.get("r2", [0.5]))
    phi_list = tuple(raw.get("phi_bar", [0.7]))
    p_list = tuple(raw.get("p_bar", [0.5]))
    if full_grid:
        r2_list, phi_list, p_list = FULL_GRID_R2, FULL_GRID_PHI, FULL_GRID_P
    for r2 in r2_list:
        if not 0.0 < r2 < 1.0:
            _fail(2, f"invalid R^2 target {r2}")
    for tgt in itertools.chain(phi_list, p_list):
        if not 0.0 < tgt < 1.0:
            _fail(2, f"invalid share target {tgt}")

    base = dict(
        n_population=int(raw.get("n_population", 10_000)),
        n_sample=int(raw.get("n_sample", 500)),
        replicates=int(replicates if replicates is not None else raw.get("replicates", 500)),
        residual_family=raw.get("residual_family", "normal"),
        quantiles=tuple(raw.get("quantiles", (0.5, 0.75, 0.9))),
        methods=tuple(methods) if methods else tuple(raw.get("methods", METHODS)),
        reg_threshold=float(reg_threshold if reg_threshold is not None
                            else raw.get("reg_threshold", 0.05)),
        estimate_variance=bool(estimate_variance or raw.get("estimate_variance", False)),
        master_seed=int(seed if seed is not None else raw.get("seed", 20240817)),
        workers=int(workers if workers is not None
                    else os.environ.get("ZIMPUTE_WORKERS", raw.get("workers", 1))),
    )
    manifest = RunManifest(
        command="simulate", inputs=(os.path.abspath(config_path) if config_path else "",),
        config={**base, "r2": r2_list, "phi_bar": phi_list, "p_bar": p_list,
                "full_grid": full_grid},
        output_dir=os.path.abspath(output_dir), seed=base["master_seed"],
        methods=base["methods"], flags={"full_grid": full_grid},
    )
    outdir = Path(output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    log_lines = []
    try:
        for r2, phib, pbar in itertools.product(r2_list, phi_list, p_list):
            config = ScenarioConfig(r2=r2, phi_bar=phib, p_bar=pbar, **base)
            table = run_monte_carlo(config)
            name = f"table_r2-{r2:g}_phi-{phib:g}_p-{pbar:g}"
            with open(outdir / f"{name}.csv", "w", newline="") as fh:
                fh.write(f"# {_stamp(manifest)}\n")
                table.to_csv(fh)
            (outdir / f"{name}.txt").write_text(
                f"# {_stamp(manifest)}\n" + table.to_text())
            log_lines.append(f"{name}: replicates={table.replicates} "
                             f"failures={len(table.failures)}")
            click.echo(f"wrote {name}.csv")
    except ValueError as exc:
        _fail(2, str(exc))
    _write_log(outdir, manifest, log_lines, time.monotonic() - t0)
    click.echo(f"simulation finished in {time.monotonic() - t0:.1f}s")


# ---------------------------------------------------------------------------
# apply-scenario
# ---------------------------------------------------------------------------

@main.command("apply-scenario")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--output-dir", required=True, type=click.Path(file_okay=False))
@click.option("--seed", type=int, default=None)
@click.option("--bootstrap", "bootstrap_b", type=int, default=None,
              help="Bootstrap replicate count.")
def cmd_apply_scenario(config_path, output_dir, seed, bootstrap_b):
    """Run the stratified survey scenario and emit the efficiency report."""
    t0 = time.monotonic()
    raw = _load_json_config(config_path)
    kwargs = {}
    tuple_keys = ("stratum_sizes", "stratum_sample_sizes", "cells_per_stratum",
                  "response_rates", "size_scales", "t_quantiles")
    if config_path is not None:
        missing = [k for k in ("stratum_sizes", "stratum_sample_sizes")
                   if k not in raw]
        if missing:
            _fail(2, f"scenario config missing {missing}")
    for key in tuple_keys:
        if key in raw:
            kwargs[key] = tuple(raw[key])
    for key in ("bootstrap_replicates", "master_seed"):
        if key in raw:
            kwargs[key] = int(raw[key])
    if "phi_covariates" in raw:
        kwargs["phi_covariates"] = raw["phi_covariates"]
    if bootstrap_b is not None:
        kwargs["bootstrap_replicates"] = bootstrap_b
    if seed is not None:
        kwargs["master_seed"] = seed
    try:
        config = ApplicationConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        _fail(2, f"invalid scenario config: {exc}")
    if config.bootstrap_replicates < 20:
        click.echo(f"warning: bootstrap with B={config.bootstrap_replicates} "
                   "replicates is unstable", err=True)
    manifest = RunManifest(
        command="apply-scenario",
        inputs=(os.path.abspath(config_path) if config_path else "",),
        config={k: list(v) if isinstance(v, tuple) else v
                for k, v in asdict(config).items()},
        output_dir=os.path.abspath(output_dir), seed=config.master_seed,
        methods=("MRR", "BMRR"), flags={},
    )
    outdir = Path(output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    report = run_application_scenario(config)
    rows = []
    for m in ("BMRR", "MRR"):
        rows.append({"row": m, "total": report.totals[m],
                     **{name: val for name, val in
                        zip(report.estimand_names[1:], report.cdf[m])}})
    rows.append({"row": "re", "total": report.re[0],
                 **{name: val for name, val in
                    zip(report.estimand_names[1:], report.re[1:])}})
    df = pd.DataFrame(rows)
    _write_csv(outdir / "application_report.csv", df, manifest)
    (outdir / "application_report.txt").write_text(
        f"# {_stamp(manifest)}\n" + report.to_text())
    _write_log(outdir, manifest,
               [f"bootstrap_replicates={config.bootstrap_replicates}"],
               time.monotonic() - t0)
    click.echo(report.to_text())


if __name__ == "__main__":
    main()
