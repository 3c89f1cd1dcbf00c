# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled balancing-walk kernels.

The reference semantics live in ``_pykernels``; this module executes the same
arithmetic in the same order, so for identical inputs (including the pre-drawn
uniform deviates) both backends produce bit-identical outputs. Keep the two
files in lockstep when editing.
"""

import numpy as np

from libc.math cimport INFINITY
from libc.stdint cimport int64_t
from libc.string cimport memcpy

BACKEND_NAME = "compiled"

# Cells within EPS of a bound count as integral and are snapped exactly.
EPS = 1e-9
cdef double _EPS = 1e-9


cdef inline double _clip01(double x) noexcept nogil:
    if x < 0.0:
        return 0.0
    if x > 1.0:
        return 1.0
    return x


cdef long _flight_core(double* p, const double* w, long m,
                       const double* uni, long* used_io) noexcept nogil:
    """Single-constraint martingale walk over ``p`` in [0,1]^m.

    Pairs up fractional cells in index order and moves each pair along the
    null direction of the constraint row ``w`` restricted to the pair, taking
    the maximal up-step with probability lam2/(lam1+lam2). Preserves
    sum(w*p) and every cell expectation; ends with at most one fractional
    cell, whose index is returned (-1 if none). One uniform per step.
    """
    cdef long used = used_io[0]
    cdef long carry = -1
    cdef long j, slot, bind1, bind2
    cdef double pj, uc, uj, lam1, lam2, bnd1, bnd2, cand, step, pv

    for j in range(m):
        pj = p[j]
        if pj <= _EPS:
            p[j] = 0.0
            continue
        if pj >= 1.0 - _EPS:
            p[j] = 1.0
            continue
        if carry < 0:
            carry = j
            continue

        # Null direction of (w[carry], w[j]) on the pair (carry, j); when both
        # weights vanish the pair is unconstrained and the carry cell is
        # resolved alone.
        uc = w[j]
        uj = -w[carry]
        if uc == 0.0 and uj == 0.0:
            uc = 1.0

        lam1 = INFINITY
        lam2 = INFINITY
        bind1 = -1
        bind2 = -1
        bnd1 = 0.0
        bnd2 = 0.0

        if uc > 0.0:
            cand = (1.0 - p[carry]) / uc
            if cand < lam1:
                lam1 = cand; bind1 = carry; bnd1 = 1.0
            cand = p[carry] / uc
            if cand < lam2:
                lam2 = cand; bind2 = carry; bnd2 = 0.0
        elif uc < 0.0:
            cand = p[carry] / (-uc)
            if cand < lam1:
                lam1 = cand; bind1 = carry; bnd1 = 0.0
            cand = (1.0 - p[carry]) / (-uc)
            if cand < lam2:
                lam2 = cand; bind2 = carry; bnd2 = 1.0
        if uj > 0.0:
            cand = (1.0 - p[j]) / uj
            if cand < lam1:
                lam1 = cand; bind1 = j; bnd1 = 1.0
            cand = p[j] / uj
            if cand < lam2:
                lam2 = cand; bind2 = j; bnd2 = 0.0
        elif uj < 0.0:
            cand = p[j] / (-uj)
            if cand < lam1:
                lam1 = cand; bind1 = j; bnd1 = 0.0
            cand = (1.0 - p[j]) / (-uj)
            if cand < lam2:
                lam2 = cand; bind2 = j; bnd2 = 1.0

        if uni[used] * (lam1 + lam2) < lam2:
            used += 1
            p[carry] = _clip01(p[carry] + lam1 * uc)
            p[j] = _clip01(p[j] + lam1 * uj)
            p[bind1] = bnd1
        else:
            used += 1
            p[carry] = _clip01(p[carry] - lam2 * uc)
            p[j] = _clip01(p[j] - lam2 * uj)
            p[bind2] = bnd2

        pv = p[carry]
        if pv <= _EPS:
            p[carry] = 0.0
        elif pv >= 1.0 - _EPS:
            p[carry] = 1.0
        pv = p[j]
        if pv <= _EPS:
            p[j] = 0.0
        elif pv >= 1.0 - _EPS:
            p[j] = 1.0

        if 0.0 < p[carry] < 1.0:
            pass  # binding cell was the other one; carry stays
        elif 0.0 < p[j] < 1.0:
            carry = j
        else:
            carry = -1

    used_io[0] = used
    return carry


def flight_k1(double[::1] p not None, double[::1] w not None,
              double[::1] uniforms not None):
    """Run the single-constraint flight walk in place on ``p``.

    Returns ``(n_uniforms_consumed, lone_fractional_index_or_minus_1)``.
    """
    cdef long m = p.shape[0]
    cdef long used = 0
    cdef long carry
    if m == 0:
        return 0, -1
    if w.shape[0] != m:
        raise ValueError("constraint row length mismatch")
    carry = _flight_core(&p[0], &w[0], m, &uniforms[0], &used)
    return used, carry


def assign_donors(double[::1] wt not None, double[::1] e not None,
                  double[::1] wrec not None, double[::1] uniforms not None,
                  int64_t[::1] donors_out not None):
    """Balanced with-replacement donor assignment.

    For every recipient, walks the selection-probability vector ``wt`` over
    the donor pool along directions that preserve both the total probability
    and the pool-residual balance functional, down to at most two fractional
    donor cells; the leftover two-cell splits are then balanced across
    recipients (weights ``wrec * (e_a - e_b)``) with a final Bernoulli
    rounding. Marginally each recipient draws donor j with probability
    ``wt[j]``. Fills ``donors_out`` with pool positions; returns the number
    of uniforms consumed.
    """
    cdef long D = wt.shape[0]
    cdef long R = wrec.shape[0]
    if D == 0:
        raise ValueError("empty donor pool")
    if donors_out.shape[0] != R:
        raise ValueError("donors_out length mismatch")
    if R == 0:
        return 0

    p_arr = np.empty(D, dtype=np.float64)
    pa_arr = np.empty(R, dtype=np.int64)
    pb_arr = np.empty(R, dtype=np.int64)
    pidx_arr = np.empty(R, dtype=np.int64)
    pt_arr = np.empty(R, dtype=np.float64)
    pq_arr = np.empty(R, dtype=np.float64)
    cdef double[::1] p = p_arr
    cdef int64_t[::1] pa = pa_arr
    cdef int64_t[::1] pb = pb_arr
    cdef int64_t[::1] pidx = pidx_arr
    cdef double[::1] pt = pt_arr
    cdef double[::1] pq = pq_arr

    cdef long used = 0
    cdef long npairs = 0
    cdef long i, j, k, cnt, chosen, s0, s1, s2, bind1, bind2, carry, ii
    cdef double pj, u0, u1, u2, lam1, lam2, bnd1, bnd2, cand, pv

    for i in range(R):
        memcpy(&p[0], &wt[0], D * sizeof(double))
        cnt = 0
        chosen = -1
        s0 = -1
        s1 = -1
        s2 = -1
        for j in range(D):
            pj = p[j]
            if pj >= 1.0 - _EPS:
                p[j] = 1.0
                chosen = j
                continue
            if pj <= _EPS:
                p[j] = 0.0
                continue
            if cnt == 0:
                s0 = j; cnt = 1
                continue
            if cnt == 1:
                s1 = j; cnt = 2
                continue
            s2 = j

            # Null direction of (sum, residual-balance) on (s0, s1, s2);
            # residual shifts cancel in the differences. All equal: fall
            # back to a sum-preserving swap of the first two cells.
            u0 = e[s1] - e[s2]
            u1 = e[s2] - e[s0]
            u2 = e[s0] - e[s1]
            if u0 == 0.0 and u1 == 0.0 and u2 == 0.0:
                u0 = 1.0; u1 = -1.0; u2 = 0.0

            lam1 = INFINITY
            lam2 = INFINITY
            bind1 = -1
            bind2 = -1
            bnd1 = 0.0
            bnd2 = 0.0

            if u0 > 0.0:
                cand = (1.0 - p[s0]) / u0
                if cand < lam1:
                    lam1 = cand; bind1 = s0; bnd1 = 1.0
                cand = p[s0] / u0
                if cand < lam2:
                    lam2 = cand; bind2 = s0; bnd2 = 0.0
            elif u0 < 0.0:
                cand = p[s0] / (-u0)
                if cand < lam1:
                    lam1 = cand; bind1 = s0; bnd1 = 0.0
                cand = (1.0 - p[s0]) / (-u0)
                if cand < lam2:
                    lam2 = cand; bind2 = s0; bnd2 = 1.0
            if u1 > 0.0:
                cand = (1.0 - p[s1]) / u1
                if cand < lam1:
                    lam1 = cand; bind1 = s1; bnd1 = 1.0
                cand = p[s1] / u1
                if cand < lam2:
                    lam2 = cand; bind2 = s1; bnd2 = 0.0
            elif u1 < 0.0:
                cand = p[s1] / (-u1)
                if cand < lam1:
                    lam1 = cand; bind1 = s1; bnd1 = 0.0
                cand = (1.0 - p[s1]) / (-u1)
                if cand < lam2:
                    lam2 = cand; bind2 = s1; bnd2 = 1.0
            if u2 > 0.0:
                cand = (1.0 - p[s2]) / u2
                if cand < lam1:
                    lam1 = cand; bind1 = s2; bnd1 = 1.0
                cand = p[s2] / u2
                if cand < lam2:
                    lam2 = cand; bind2 = s2; bnd2 = 0.0
            elif u2 < 0.0:
                cand = p[s2] / (-u2)
                if cand < lam1:
                    lam1 = cand; bind1 = s2; bnd1 = 0.0
                cand = (1.0 - p[s2]) / (-u2)
                if cand < lam2:
                    lam2 = cand; bind2 = s2; bnd2 = 1.0

            if uniforms[used] * (lam1 + lam2) < lam2:
                used += 1
                p[s0] = _clip01(p[s0] + lam1 * u0)
                p[s1] = _clip01(p[s1] + lam1 * u1)
                p[s2] = _clip01(p[s2] + lam1 * u2)
                p[bind1] = bnd1
            else:
                used += 1
                p[s0] = _clip01(p[s0] - lam2 * u0)
                p[s1] = _clip01(p[s1] - lam2 * u1)
                p[s2] = _clip01(p[s2] - lam2 * u2)
                p[bind2] = bnd2

            pv = p[s0]
            if pv <= _EPS:
                p[s0] = 0.0
            elif pv >= 1.0 - _EPS:
                p[s0] = 1.0
                chosen = s0
            pv = p[s1]
            if pv <= _EPS:
                p[s1] = 0.0
            elif pv >= 1.0 - _EPS:
                p[s1] = 1.0
                chosen = s1
            pv = p[s2]
            if pv <= _EPS:
                p[s2] = 0.0
            elif pv >= 1.0 - _EPS:
                p[s2] = 1.0
                chosen = s2

            # compact: keep the (at most two) still-fractional slots in order
            cnt = 0
            if 0.0 < p[s0] < 1.0:
                cnt = 1
            if 0.0 < p[s1] < 1.0:
                if cnt == 0:
                    s0 = s1
                cnt += 1
            if 0.0 < p[s2] < 1.0:
                if cnt == 0:
                    s0 = s2
                elif cnt == 1:
                    s1 = s2
                cnt += 1
            s2 = -1

        if chosen >= 0:
            donors_out[i] = chosen
            continue
        if cnt == 2:
            pidx[npairs] = i
            pa[npairs] = s0
            pb[npairs] = s1
            pt[npairs] = p[s0]
            npairs += 1
            continue
        if cnt == 1:
            # total probability says the lone cell carries essentially all
            # remaining mass; resolve to it
            donors_out[i] = s0
            continue
        raise RuntimeError("donor reduction lost all probability mass")

    if npairs > 0:
        for k in range(npairs):
            pq[k] = wrec[pidx[k]] * (e[pa[k]] - e[pb[k]])
        carry = _flight_core(&pt[0], &pq[0], npairs, &uniforms[0], &used)
        for k in range(npairs):
            ii = pidx[k]
            if k == carry:
                if uniforms[used] < pt[k]:
                    donors_out[ii] = pa[k]
                else:
                    donors_out[ii] = pb[k]
                used += 1
            elif pt[k] == 1.0:
                donors_out[ii] = pa[k]
            else:
                donors_out[ii] = pb[k]

    return used
