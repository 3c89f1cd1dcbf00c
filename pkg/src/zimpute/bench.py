"""Benchmark the compiled balancing-walk kernels against the pure fallback.

Run as ``python -m zimpute.bench``. Workloads mirror the hot paths of the
balanced imputation mechanisms: the single-constraint flight walk over the
non-respondent cells and the per-recipient donor-assignment reduction. The
two backends are also checked for bit-identical outputs on each workload.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from ._kernels import load_backend


def _workload_flight(rng, m):
    p = rng.uniform(0.05, 0.95, m)
    w = rng.normal(20.0, 5.0, m) * rng.uniform(30.0, 90.0, m)
    return p, w


def _workload_donors(rng, n_recipients, n_donors):
    wt = rng.uniform(0.2, 1.8, n_donors)
    wt /= wt.sum()
    e = rng.normal(0.0, 10.0, n_donors)
    wrec = rng.uniform(10.0, 30.0, n_recipients)
    return wt, e, wrec


def _time(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def run(repeats: int = 5, m: int = 250, recipients: int = 175, donors: int = 175):
    pure = load_backend("pure")
    try:
        compiled = load_backend("compiled")
    except ImportError:
        compiled = None
        print("compiled backend not built; timing the pure backend only")

    rng = np.random.default_rng(1234)
    rows = []

    p0, w = _workload_flight(rng, m)
    uni = np.random.default_rng(99).random(m + 2)

    def flight(backend):
        p = p0.copy()
        backend.flight_k1(p, w, uni)
        return p

    pure_t = _time(lambda: flight(pure), repeats)
    row = [f"flight walk (m={m})", pure_t, None, None]
    if compiled is not None:
        comp_t = _time(lambda: flight(compiled), repeats)
        assert np.array_equal(flight(pure), flight(compiled)), "backend mismatch"
        row[2] = comp_t
        row[3] = pure_t / comp_t
    rows.append(row)

    wt, e, wrec = _workload_donors(rng, recipients, donors)
    uni2 = np.random.default_rng(7).random(recipients * donors + recipients + 8)

    def assign(backend):
        out = np.empty(recipients, dtype=np.int64)
        backend.assign_donors(wt, e, wrec, uni2, out)
        return out

    pure_t = _time(lambda: assign(pure), repeats)
    row = [f"donor assignment ({recipients}x{donors})", pure_t, None, None]
    if compiled is not None:
        comp_t = _time(lambda: assign(compiled), repeats)
        assert np.array_equal(assign(pure), assign(compiled)), "backend mismatch"
        row[2] = comp_t
        row[3] = pure_t / comp_t
    rows.append(row)

    print(f"{'workload':<34}{'pure (ms)':>12}{'compiled (ms)':>15}{'speedup':>10}")
    for name, pt, ct, sp in rows:
        ct_txt = f"{1e3 * ct:15.3f}" if ct is not None else f"{'-':>15}"
        sp_txt = f"{sp:10.1f}" if sp is not None else f"{'-':>10}"
        print(f"{name:<34}{1e3 * pt:12.3f}{ct_txt}{sp_txt}")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--cells", type=int, default=250)
    ap.add_argument("--recipients", type=int, default=175)
    ap.add_argument("--donors", type=int, default=175)
    args = ap.parse_args()
    run(args.repeats, args.cells, args.recipients, args.donors)


if __name__ == "__main__":
    main()
