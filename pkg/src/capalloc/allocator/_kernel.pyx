# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled simulation kernel; see ``_fallback.run_block`` for the contract."""

cdef enum:
    MAXN = 64

cdef double EPS = 1e-12


cdef int _pivot(const double* m, const double* u, int n, long k, char* out) noexcept nogil:
    cdef int i, carrier = -1, s = 0, cnt = 0
    cdef double a = 0.0, b, tot, w, rem
    for i in range(n):
        out[i] = 0
    for i in range(n):
        b = m[i]
        if b >= 1.0 - EPS:
            out[i] = 1
            cnt += 1
            continue
        if b <= EPS:
            continue
        if carrier < 0:
            carrier = i
            a = b
            continue
        w = u[s]
        s += 1
        tot = a + b
        if tot < 1.0 - EPS:
            if not (w < a / tot):
                carrier = i
            a = tot
        else:
            rem = tot - 1.0
            if w < (1.0 - b) / (2.0 - tot):
                out[carrier] = 1
                carrier = i
            else:
                out[i] = 1
            cnt += 1
            a = rem
            if rem <= EPS:
                carrier = -1
    if carrier >= 0 and cnt < k:
        if u[s] < a:
            out[carrier] = 1
            cnt += 1
    return cnt


def run_block(tb, double[:, :, ::1] U, long stop_round,
              long long[:, :, ::1] cnt1, long long[:, :, ::1] cnt2,
              long long[:, :, ::1] succ, long long[:, ::1] realized,
              double[::1] welfare, sigma_cnt):
    cdef int n = tb.n
    cdef int T = tb.T
    cdef const double[:, ::1] cum_p = tb.cum_p
    cdef const double[:, ::1] probs = tb.probs
    cdef const long long[::1] n_real = tb.n_real
    cdef const long long[:, ::1] cap = tb.cap
    cdef const double[:, :, ::1] marg = tb.marg
    cdef const double[:, ::1] alpha = tb.alpha
    cdef const unsigned char[:, ::1] late = tb.late
    cdef const double[:, :, ::1] beta = tb.beta
    cdef const double[:, :, ::1] q = tb.q
    cdef const double[:, :, ::1] val = tb.val
    cdef long long[:, :, ::1] sig
    cdef bint want_sigma = sigma_cnt is not None and stop_round < T
    if want_sigma:
        sig = sigma_cnt
    if n > MAXN:
        raise ValueError("compiled kernel supports at most 64 users")
    if U.shape[1] < stop_round or U.shape[2] < 1 + 5 * n:
        raise ValueError("uniform block has the wrong shape")

    cdef Py_ssize_t B = U.shape[0], bi
    cdef int t, j, i, nr, A, c
    cdef long violations = 0
    cdef char avail[MAXN]
    cdef char fp[MAXN]
    cdef char sp[MAXN]
    cdef char a1[MAXN]
    cdef char a2[MAXN]
    cdef double m2[MAXN]
    cdef double factor, u0
    cdef const double* ur

    with nogil:
        for bi in range(B):
            for i in range(n):
                avail[i] = 1
            for t in range(stop_round):
                ur = &U[bi, t, 0]
                u0 = ur[0]
                nr = <int>n_real[t]
                j = 0
                while j < nr - 1 and u0 >= cum_p[t, j]:
                    j += 1
                realized[t, j] += 1
                c = <int>cap[t, j]
                if c == 0 or probs[t, j] <= 0.0:
                    continue
                _pivot(&marg[t, j, 0], ur + 1, n, c, fp)
                A = 0
                for i in range(n):
                    a1[i] = 0
                    if fp[i] and avail[i] and ur[1 + n + i] < alpha[t, i]:
                        a1[i] = 1
                        A += 1
                factor = 1.0 - (<double>A) / (<double>c)
                for i in range(n):
                    m2[i] = factor * marg[t, j, i]
                _pivot(m2, ur + 1 + 2 * n, n, c - A, sp)
                for i in range(n):
                    a2[i] = 0
                    if sp[i] and late[t, i] and avail[i] and not a1[i] \
                            and ur[1 + 3 * n + i] < beta[t, j, i]:
                        a2[i] = 1
                        A += 1
                if A > c:
                    violations += 1
                for i in range(n):
                    if a1[i]:
                        cnt1[t, j, i] += 1
                    if a2[i]:
                        cnt2[t, j, i] += 1
                    if (a1[i] or a2[i]) and ur[1 + 4 * n + i] < q[t, j, i]:
                        succ[t, j, i] += 1
                        welfare[bi] += val[t, j, i]
                        avail[i] = 0
            if want_sigma:
                t = stop_round
                ur = &U[bi, t, 0]
                for j in range(<int>n_real[t]):
                    c = <int>cap[t, j]
                    if c == 0 or probs[t, j] <= 0.0:
                        continue
                    _pivot(&marg[t, j, 0], ur + 1, n, c, fp)
                    A = 0
                    for i in range(n):
                        a1[i] = 0
                        if fp[i] and avail[i] and ur[1 + n + i] < alpha[t, i]:
                            a1[i] = 1
                            A += 1
                    for i in range(n):
                        if avail[i] and not a1[i]:
                            sig[j, i, A] += 1
    return violations
