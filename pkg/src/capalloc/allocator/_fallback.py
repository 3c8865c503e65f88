"""Pure-Python (numpy-vectorized over trials) simulation kernel.

Same contract and same uniform layout as the compiled ``_kernel`` module;
given identical uniforms both produce identical counts.  Layout of the
``1 + 5n`` uniforms per round: ``[0]`` realization draw, then five blocks of
``n``: first-proposal pivots, alpha coins, second-proposal pivots, beta coins,
success coins.
"""
from __future__ import annotations

import numpy as np

EPS = 1e-12


def pivot_batch(M, Uv, k):
    """Canonical pivotal sampling for each row of ``M`` with row caps ``k``."""
    B, n = M.shape
    chosen = np.zeros((B, n), dtype=bool)
    carrier = np.full(B, -1, dtype=np.int64)
    a = np.zeros(B)
    s = np.zeros(B, dtype=np.int64)
    cnt = np.zeros(B, dtype=np.int64)
    rows = np.arange(B)
    for i in range(n):
        b = M[:, i]
        one = b >= 1.0 - EPS
        chosen[one, i] = True
        cnt += one
        frac = ~one & (b > EPS)
        has = carrier >= 0
        start = frac & ~has
        piv = frac & has
        if piv.any():
            r = rows[piv]
            w = Uv[r, s[r]]
            s[r] += 1
            aa = a[r]
            bb = b[r]
            tot = aa + bb
            lt = tot < 1.0 - EPS
            if lt.any():
                rl = r[lt]
                keep = w[lt] < aa[lt] / tot[lt]
                carrier[rl[~keep]] = i
                a[rl] = tot[lt]
            ge = ~lt
            if ge.any():
                rg = r[ge]
                totg = tot[ge]
                rem = totg - 1.0
                old = w[ge] < (1.0 - bb[ge]) / (2.0 - totg)
                ro = rg[old]
                chosen[ro, carrier[ro]] = True
                carrier[ro] = i
                chosen[rg[~old], i] = True
                cnt[rg] += 1
                a[rg] = rem
                carrier[rg[rem <= EPS]] = -1
        carrier[start] = i
        a[start] = b[start]
    fin = (carrier >= 0) & (cnt < k)
    if fin.any():
        r = rows[fin]
        inc = Uv[r, s[r]] < a[r]
        ri = r[inc]
        chosen[ri, carrier[ri]] = True
    return chosen


def _first_stage(tb, t, j, U, rows, avail):
    n = tb.n
    Ur = U[rows, t]
    M = np.broadcast_to(tb.marg[t, j], (rows.size, n))
    k = np.full(rows.size, tb.cap[t, j], dtype=np.int64)
    fp = pivot_batch(M, Ur[:, 1:1 + n], k)
    a1 = fp & avail[rows] & (Ur[:, 1 + n:1 + 2 * n] < tb.alpha[t])
    return Ur, fp, a1


def run_block(tb, U, stop_round, cnt1, cnt2, succ, realized, welfare, sigma_cnt,
              record=None):
    """Simulate ``U.shape[0]`` trials through rounds ``[0, stop_round)``.

    Count arrays are accumulated in place.  When ``stop_round < T`` and
    ``sigma_cnt`` is given, the first-proposal stage of round ``stop_round`` is
    run for every realization and ``sigma_cnt[j, i, A]`` counts trials where
    user ``i`` is available and unallocated with ``A`` first-stage allocations.
    Returns the number of capacity violations (always zero).
    """
    n = tb.n
    B = U.shape[0]
    avail = np.ones((B, n), dtype=bool)
    violations = 0
    for t in range(stop_round):
        u0 = U[:, t, 0]
        nr = int(tb.n_real[t])
        jsel = np.zeros(B, dtype=np.int64)
        for jj in range(nr - 1):
            jsel += u0 >= tb.cum_p[t, jj]
        rec = {"j": jsel.copy()} if record is not None else None
        for j in range(nr):
            rows = np.nonzero(jsel == j)[0]
            realized[t, j] += rows.size
            c = int(tb.cap[t, j])
            if rows.size == 0 or c == 0 or tb.probs[t, j] <= 0.0:
                continue
            Ur, fp, a1 = _first_stage(tb, t, j, U, rows, avail)
            A = a1.sum(axis=1)
            factor = 1.0 - A / c
            M2 = factor[:, None] * tb.marg[t, j][None, :]
            sp = pivot_batch(M2, Ur[:, 1 + 2 * n:1 + 3 * n], c - A)
            a2 = (sp & tb.late[t].astype(bool) & avail[rows] & ~a1
                  & (Ur[:, 1 + 3 * n:1 + 4 * n] < tb.beta[t, j]))
            alloc = a1 | a2
            violations += int((alloc.sum(axis=1) > c).sum())
            ok = alloc & (Ur[:, 1 + 4 * n:1 + 5 * n] < tb.q[t, j])
            cnt1[t, j] += a1.sum(axis=0)
            cnt2[t, j] += a2.sum(axis=0)
            succ[t, j] += ok.sum(axis=0)
            # accumulate per user in index order, as the compiled kernel does
            gain = welfare[rows]
            for i in range(n):
                gain = gain + np.where(ok[:, i], tb.val[t, j, i], 0.0)
            welfare[rows] = gain
            avail[rows] &= ~ok
            if rec is not None:
                rec[j] = {"rows": rows, "fp": fp, "a1": a1, "sp": sp, "a2": a2, "ok": ok,
                          "alpha_u": Ur[:, 1 + n:1 + 2 * n], "beta_u": Ur[:, 1 + 3 * n:1 + 4 * n]}
        if record is not None:
            record.append(rec)
    if sigma_cnt is not None and stop_round < tb.T:
        t = stop_round
        rows = np.arange(B)
        for j in range(int(tb.n_real[t])):
            c = int(tb.cap[t, j])
            if c == 0 or tb.probs[t, j] <= 0.0:
                continue
            _, _, a1 = _first_stage(tb, t, j, U, rows, avail)
            A = a1.sum(axis=1)
            free = avail & ~a1
            for a_val in np.unique(A):
                sel = A == a_val
                sigma_cnt[j, :, a_val] += free[sel].sum(axis=0)
    return violations
