"""Pure-Python balancing-walk kernels (fallback backend).

Reference implementation for the compiled twin in ``_ckernels.pyx``: both
execute the same IEEE double arithmetic in the same order, so for identical
inputs (including the pre-drawn uniforms) they produce bit-identical outputs.
Keep the two files in lockstep when editing.
"""

import numpy as np

BACKEND_NAME = "pure"

# Cells within EPS of a bound count as integral and are snapped exactly.
EPS = 1e-9

_INF = float("inf")


def _flight_core(p, w, uni, used):
    """Single-constraint martingale walk over cells ``p`` (a list) in [0,1].

    Pairs up fractional cells in index order and moves each pair along the
    null direction of the constraint row ``w`` restricted to the pair, taking
    the maximal up-step with probability lam2/(lam1+lam2). Preserves
    sum(w*p) and every cell expectation; ends with at most one fractional
    cell, whose index is returned with the updated uniform cursor.
    """
    m = len(p)
    carry = -1
    for j in range(m):
        pj = p[j]
        if pj <= EPS:
            p[j] = 0.0
            continue
        if pj >= 1.0 - EPS:
            p[j] = 1.0
            continue
        if carry < 0:
            carry = j
            continue

        uc = w[j]
        uj = -w[carry]
        if uc == 0.0 and uj == 0.0:
            uc = 1.0

        lam1 = _INF
        lam2 = _INF
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
            p[carry] = min(max(p[carry] + lam1 * uc, 0.0), 1.0)
            p[j] = min(max(p[j] + lam1 * uj, 0.0), 1.0)
            p[bind1] = bnd1
        else:
            used += 1
            p[carry] = min(max(p[carry] - lam2 * uc, 0.0), 1.0)
            p[j] = min(max(p[j] - lam2 * uj, 0.0), 1.0)
            p[bind2] = bnd2

        pv = p[carry]
        if pv <= EPS:
            p[carry] = 0.0
        elif pv >= 1.0 - EPS:
            p[carry] = 1.0
        pv = p[j]
        if pv <= EPS:
            p[j] = 0.0
        elif pv >= 1.0 - EPS:
            p[j] = 1.0

        if 0.0 < p[carry] < 1.0:
            pass  # binding cell was the other one; carry stays
        elif 0.0 < p[j] < 1.0:
            carry = j
        else:
            carry = -1

    return used, carry


def flight_k1(p, w, uniforms):
    """Run the single-constraint flight walk in place on ``p``.

    Returns ``(n_uniforms_consumed, lone_fractional_index_or_minus_1)``.
    """
    m = p.shape[0]
    if m == 0:
        return 0, -1
    if w.shape[0] != m:
        raise ValueError("constraint row length mismatch")
    pl = p.tolist()
    used, carry = _flight_core(pl, w.tolist(), uniforms.tolist(), 0)
    p[:] = pl
    return used, carry


def assign_donors(wt, e, wrec, uniforms, donors_out):
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
    D = wt.shape[0]
    R = wrec.shape[0]
    if D == 0:
        raise ValueError("empty donor pool")
    if donors_out.shape[0] != R:
        raise ValueError("donors_out length mismatch")
    if R == 0:
        return 0

    wtl = wt.tolist()
    el = e.tolist()
    wrecl = wrec.tolist()
    uni = uniforms.tolist()

    pa = [0] * R
    pb = [0] * R
    pidx = [0] * R
    pt = [0.0] * R

    used = 0
    npairs = 0

    for i in range(R):
        p = wtl.copy()
        cnt = 0
        chosen = -1
        s0 = -1
        s1 = -1
        s2 = -1
        for j in range(D):
            pj = p[j]
            if pj >= 1.0 - EPS:
                p[j] = 1.0
                chosen = j
                continue
            if pj <= EPS:
                p[j] = 0.0
                continue
            if cnt == 0:
                s0 = j; cnt = 1
                continue
            if cnt == 1:
                s1 = j; cnt = 2
                continue
            s2 = j

            u0 = el[s1] - el[s2]
            u1 = el[s2] - el[s0]
            u2 = el[s0] - el[s1]
            if u0 == 0.0 and u1 == 0.0 and u2 == 0.0:
                u0 = 1.0; u1 = -1.0; u2 = 0.0

            lam1 = _INF
            lam2 = _INF
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

            if uni[used] * (lam1 + lam2) < lam2:
                used += 1
                p[s0] = min(max(p[s0] + lam1 * u0, 0.0), 1.0)
                p[s1] = min(max(p[s1] + lam1 * u1, 0.0), 1.0)
                p[s2] = min(max(p[s2] + lam1 * u2, 0.0), 1.0)
                p[bind1] = bnd1
            else:
                used += 1
                p[s0] = min(max(p[s0] - lam2 * u0, 0.0), 1.0)
                p[s1] = min(max(p[s1] - lam2 * u1, 0.0), 1.0)
                p[s2] = min(max(p[s2] - lam2 * u2, 0.0), 1.0)
                p[bind2] = bnd2

            pv = p[s0]
            if pv <= EPS:
                p[s0] = 0.0
            elif pv >= 1.0 - EPS:
                p[s0] = 1.0
                chosen = s0
            pv = p[s1]
            if pv <= EPS:
                p[s1] = 0.0
            elif pv >= 1.0 - EPS:
                p[s1] = 1.0
                chosen = s1
            pv = p[s2]
            if pv <= EPS:
                p[s2] = 0.0
            elif pv >= 1.0 - EPS:
                p[s2] = 1.0
                chosen = s2

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
            donors_out[i] = s0
            continue
        raise RuntimeError("donor reduction lost all probability mass")

    if npairs > 0:
        tl = pt[:npairs]
        ql = [wrecl[pidx[k]] * (el[pa[k]] - el[pb[k]]) for k in range(npairs)]
        used, carry = _flight_core(tl, ql, uni, used)
        for k in range(npairs):
            ii = pidx[k]
            if k == carry:
                donors_out[ii] = pa[k] if uni[used] < tl[k] else pb[k]
                used += 1
            elif tl[k] == 1.0:
                donors_out[ii] = pa[k]
            else:
                donors_out[ii] = pb[k]

    return used
