# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled evaluation loops; semantics mirror faq._kernels_py exactly.

Shares the counter-based generator with the python backend bit for bit, so
both backends replay the same draws for a given seed.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log, sqrt

from .errors import NumericalError

cnp.import_array()

BACKEND_NAME = "compiled"

ctypedef unsigned long long u64

cdef double PROB_CLAMP = 1e-6
cdef double SCORE_FLOOR = 1e-300
cdef double REJITTER = 1e-10


cdef inline u64 _mix64(u64 x) nogil:
    x = x + <u64>0x9E3779B97F4A7C15
    x = (x ^ (x >> 30)) * <u64>0xBF58476D1CE4E5B9
    x = (x ^ (x >> 27)) * <u64>0x94D049BB133111EB
    return x ^ (x >> 31)


cdef inline double _uniform(u64 seed, u64 counter) nogil:
    cdef u64 x = _mix64(seed)
    x = _mix64(x ^ counter)
    return <double>(x >> 11) * (1.0 / 9007199254740992.0)


cdef inline double _sigmoid(double x) nogil:
    cdef double e
    if x >= 0.0:
        return 1.0 / (1.0 + exp(-x))
    e = exp(x)
    return e / (1.0 + e)


cdef int _cholesky_ok(double[:, ::1] S, double[:, ::1] work, int k) nogil:
    cdef int i, j, m
    cdef double s
    for i in range(k):
        for j in range(k):
            work[i, j] = S[i, j]
    for j in range(k):
        s = work[j, j]
        for m in range(j):
            s -= work[j, m] * work[j, m]
        if s <= 0.0:
            return 0
        work[j, j] = sqrt(s)
        for i in range(j + 1, k):
            s = work[i, j]
            for m in range(j):
                s -= work[i, m] * work[j, m]
            work[i, j] = s / work[j, j]
    return 1


cdef int _laplace_update(double[::1] u, double[:, ::1] S, double[:, ::1] V, int row,
                         double z, double[::1] sv, double[:, ::1] work, int k) nogil:
    """Rank-1 covariance downdate + mean shift; 0 on SPD failure after rejitter."""
    cdef double dot = 0.0, p, w, vsv, coef, m, r
    cdef int a, b
    for a in range(k):
        dot += u[a] * V[row, a]
    p = _sigmoid(dot)
    w = p * (1.0 - p)
    vsv = 0.0
    for a in range(k):
        sv[a] = 0.0
        for b in range(k):
            sv[a] += S[a, b] * V[row, b]
        vsv += V[row, a] * sv[a]
    coef = w / (1.0 + w * vsv)
    for a in range(k):
        for b in range(k):
            S[a, b] -= coef * sv[a] * sv[b]
    for a in range(k):
        for b in range(a + 1, k):
            m = 0.5 * (S[a, b] + S[b, a])
            S[a, b] = m
            S[b, a] = m
    if not _cholesky_ok(S, work, k):
        for a in range(k):
            S[a, a] += REJITTER
        if not _cholesky_ok(S, work, k):
            return 0
    r = z - p
    for a in range(k):
        sv[a] = 0.0
        for b in range(k):
            sv[a] += S[a, b] * (r * V[row, b])
    for a in range(k):
        u[a] += sv[a]
    return 1


cdef int _draw(double[::1] q, int n, double u) nogil:
    cdef double cum = 0.0
    cdef int j
    for j in range(n):
        cum += q[j]
        if u < cum:
            return j
    for j in range(n - 1, -1, -1):
        if q[j] > 0.0:
            return j
    return n - 1


def run_pai(z_arr, V_arr, u0, S0, double rho, double gamma, double beta0,
            double tau, int n_b, object seed_obj, bint without_replacement):
    cdef cnp.int8_t[::1] z = np.ascontiguousarray(z_arr, dtype=np.int8)
    cdef double[:, ::1] V = np.ascontiguousarray(V_arr, dtype=np.float64)
    cdef int n = V.shape[0], k = V.shape[1]
    cdef u64 seed = <u64>(int(seed_obj) & 0xFFFFFFFFFFFFFFFF)

    u_arr = np.array(u0, dtype=np.float64).reshape(-1).copy()
    S_arr = np.array(S0, dtype=np.float64).copy()
    cdef double[::1] u = u_arr
    cdef double[:, ::1] S = S_arr

    idx_np = np.empty(n_b, dtype=np.int64)
    q_np = np.empty(n_b, dtype=np.float64)
    zs_np = np.empty(n_b, dtype=np.int8)
    ps_np = np.empty(n_b, dtype=np.float64)
    pss_np = np.empty(n_b, dtype=np.float64)
    cdef cnp.int64_t[::1] idx_out = idx_np
    cdef double[::1] q_out = q_np
    cdef cnp.int8_t[::1] zs_out = zs_np
    cdef double[::1] ps_out = ps_np
    cdef double[::1] pss_out = pss_np

    cdef double[::1] p = np.empty(n)
    cdef double[::1] wraw = np.empty(n)
    cdef double[::1] so = np.empty(n)
    cdef double[::1] sa = np.empty(n)
    cdef double[::1] mix = np.empty(n)
    cdef double[::1] nh = np.empty(n)
    cdef double[::1] q = np.empty(n)
    cdef double[::1] g = np.empty(k)
    cdef double[::1] sg = np.empty(k)
    cdef double[::1] sv = np.empty(k)
    cdef double[:, ::1] work = np.empty((k, k))
    cdef cnp.uint8_t[::1] queried = np.zeros(n, dtype=np.uint8)

    cdef int t, j, a, b, pick, n_rem, n_fallback = 0
    cdef double dot, pj, wj, psum, so_sum, sa_sum, alpha_t, beta_t
    cdef double mix_sum, hs, row, aq, quad, s_rem, uu
    cdef bint fallback

    for t in range(1, n_b + 1):
        psum = 0.0
        for j in range(n):
            dot = 0.0
            for a in range(k):
                dot += V[j, a] * u[a]
            pj = _sigmoid(dot)
            wraw[j] = pj * (1.0 - pj)  # exploration weights use the raw sigmoid
            if pj < PROB_CLAMP:
                pj = PROB_CLAMP
            elif pj > 1.0 - PROB_CLAMP:
                pj = 1.0 - PROB_CLAMP
            p[j] = pj
            psum += pj
        # exploitation and exploration scores
        so_sum = 0.0
        for a in range(k):
            g[a] = 0.0
        for j in range(n):
            so[j] = sqrt(p[j] * (1.0 - p[j]))
            so_sum += so[j]
            for a in range(k):
                g[a] += wraw[j] * V[j, a]
        for a in range(k):
            g[a] /= n
            sg[a] = 0.0
        for a in range(k):
            for b in range(k):
                sg[a] += S[a, b] * g[b]
        sa_sum = 0.0
        for j in range(n):
            aq = 0.0
            quad = 0.0
            for a in range(k):
                row = 0.0
                for b in range(k):
                    row += S[a, b] * V[j, b]
                quad += V[j, a] * row
                aq += V[j, a] * sg[a]
            sa[j] = wraw[j] * aq * aq / (1.0 + wraw[j] * quad)
            sa_sum += sa[j]
        # schedules
        if rho == 0.0:
            alpha_t = 0.0
        else:
            alpha_t = 1.0 - t / (rho * n_b)
            if alpha_t < 0.0:
                alpha_t = 0.0
        if gamma == 0.0:
            beta_t = beta0
        else:
            beta_t = t / (gamma * n_b)
            if beta_t > 1.0:
                beta_t = 1.0
            beta_t *= beta0
        # mix, temper, tau-floor
        mix_sum = 0.0
        for j in range(n):
            mix[j] = 0.0
            if so_sum > 0.0:
                mix[j] += (1.0 - alpha_t) * (so[j] / so_sum)
            if sa_sum > 0.0:
                mix[j] += alpha_t * (sa[j] / sa_sum)
            mix_sum += mix[j]
        fallback = mix_sum <= 0.0
        hs = 0.0
        for j in range(n):
            if fallback or beta_t == 0.0:
                nh[j] = 1.0
            elif mix[j] > 0.0:
                nh[j] = exp(beta_t * log(max(mix[j], SCORE_FLOOR)))
            else:
                nh[j] = 0.0
            hs += nh[j]
        for j in range(n):
            nh[j] /= hs
        if not without_replacement:
            for j in range(n):
                q[j] = tau / n + (1.0 - tau) * nh[j]
        else:
            n_rem = 0
            s_rem = 0.0
            for j in range(n):
                if queried[j]:
                    nh[j] = 0.0
                else:
                    n_rem += 1
                    s_rem += nh[j]
            if n_rem == 0:
                raise ValueError("no unqueried questions remain")
            if s_rem <= 0.0:
                fallback = True
            for j in range(n):
                if queried[j]:
                    q[j] = 0.0
                elif s_rem > 0.0:
                    q[j] = tau / n_rem + (1.0 - tau) * (nh[j] / s_rem)
                else:
                    q[j] = tau / n_rem + (1.0 - tau) / n_rem
        if fallback:
            n_fallback += 1
        uu = _uniform(seed, <u64>t)
        pick = _draw(q, n, uu)
        idx_out[t - 1] = pick
        q_out[t - 1] = q[pick]
        zs_out[t - 1] = z[pick]
        ps_out[t - 1] = p[pick]
        pss_out[t - 1] = psum
        if not _laplace_update(u, S, V, pick, <double>z[pick], sv, work, k):
            raise NumericalError(f"belief update failed at round {t}")
        if without_replacement:
            queried[pick] = 1
    return idx_np, q_np, zs_np, ps_np, pss_np, n_fallback


def run_stream_fixed(z_arr, plan_arr, int n_b, object seed_obj):
    cdef cnp.int8_t[::1] z = np.ascontiguousarray(z_arr, dtype=np.int8)
    cdef double[::1] plan = np.ascontiguousarray(plan_arr, dtype=np.float64)
    cdef int n = z.shape[0]
    cdef u64 seed = <u64>(int(seed_obj) & 0xFFFFFFFFFFFFFFFF)

    xi_np = np.zeros(n, dtype=np.int8)
    pi_np = np.zeros(n, dtype=np.float64)
    cdef cnp.int8_t[::1] xi = xi_np
    cdef double[::1] pi_adj = pi_np
    cdef double[::1] suffix = np.empty(n)

    cdef int t, used = 0
    cdef double pa
    suffix[n - 1] = plan[n - 1]
    for t in range(n - 2, -1, -1):
        suffix[t] = plan[t] + suffix[t + 1]
    for t in range(n):
        pa = _stabilized(plan[t], suffix[t], used, n_b)
        pi_adj[t] = pa
        if _uniform(seed, <u64>(t + 1)) < pa:
            xi[t] = 1
            used += 1
    return xi_np, pi_np, used


cdef inline double _stabilized(double pi_t, double e_rem, int used, int n_b) nogil:
    cdef int remaining = n_b - used
    cdef double v
    if remaining <= 0 or e_rem <= 0.0:
        return 0.0
    v = pi_t * remaining / e_rem
    if v < 0.0:
        return 0.0
    if v > 1.0:
        return 1.0
    return v


cdef void _min_rule_plan(double[::1] u, double[:, ::1] V, double tau, int n_b,
                         double[::1] p, double[::1] mixed, double[::1] plan,
                         double[::1] suffix, cnp.uint8_t[::1] capped,
                         int n, int k) nogil:
    """Rebuild the labeling plan from the current belief mean."""
    cdef int j, a
    cdef double dot, pj, raw_sum = 0.0, wsum = 0.0, mass, remaining
    cdef bint any_over
    cdef int ncap
    for j in range(n):
        dot = 0.0
        for a in range(k):
            dot += V[j, a] * u[a]
        pj = _sigmoid(dot)
        if pj < PROB_CLAMP:
            pj = PROB_CLAMP
        elif pj > 1.0 - PROB_CLAMP:
            pj = 1.0 - PROB_CLAMP
        p[j] = pj
        mixed[j] = pj if pj < 1.0 - pj else 1.0 - pj
        raw_sum += mixed[j]
    for j in range(n):
        mixed[j] = tau / n + (1.0 - tau) * (mixed[j] / raw_sum)
        wsum += mixed[j]
    for j in range(n):
        plan[j] = n_b * mixed[j] / wsum
        capped[j] = 0
    while True:
        any_over = False
        for j in range(n):
            if plan[j] > 1.0 and not capped[j]:
                capped[j] = 1
                any_over = True
        if not any_over:
            break
        ncap = 0
        mass = 0.0
        for j in range(n):
            if capped[j]:
                plan[j] = 1.0
                ncap += 1
            else:
                mass += mixed[j]
        remaining = n_b - ncap
        if remaining <= 0.0 or mass <= 0.0:
            for j in range(n):
                if not capped[j]:
                    plan[j] = 0.0
            break
        for j in range(n):
            if not capped[j]:
                plan[j] = remaining * mixed[j] / mass
    suffix[n - 1] = plan[n - 1]
    for j in range(n - 2, -1, -1):
        suffix[j] = plan[j] + suffix[j + 1]


def run_stream_adaptive(z_arr, V_arr, u0, S0, double tau, int n_b, object seed_obj):
    cdef cnp.int8_t[::1] z = np.ascontiguousarray(z_arr, dtype=np.int8)
    cdef double[:, ::1] V = np.ascontiguousarray(V_arr, dtype=np.float64)
    cdef int n = V.shape[0], k = V.shape[1]
    cdef u64 seed = <u64>(int(seed_obj) & 0xFFFFFFFFFFFFFFFF)

    u_arr = np.array(u0, dtype=np.float64).reshape(-1).copy()
    S_arr = np.array(S0, dtype=np.float64).copy()
    cdef double[::1] u = u_arr
    cdef double[:, ::1] S = S_arr

    xi_np = np.zeros(n, dtype=np.int8)
    pi_np = np.zeros(n, dtype=np.float64)
    pb_np = np.zeros(n, dtype=np.float64)
    cdef cnp.int8_t[::1] xi = xi_np
    cdef double[::1] pi_plan = pi_np  # unadjusted plan value at each position
    cdef double[::1] p_base = pb_np

    cdef double[::1] p = np.empty(n)
    cdef double[::1] mixed = np.empty(n)
    cdef double[::1] plan = np.empty(n)
    cdef double[::1] suffix = np.empty(n)
    cdef cnp.uint8_t[::1] capped = np.zeros(n, dtype=np.uint8)
    cdef double[::1] sv = np.empty(k)
    cdef double[:, ::1] work = np.empty((k, k))

    cdef int t, used = 0
    cdef double pa

    _min_rule_plan(u, V, tau, n_b, p, mixed, plan, suffix, capped, n, k)
    for t in range(n):
        p_base[t] = p[t]
        pi_plan[t] = plan[t]
        pa = _stabilized(plan[t], suffix[t], used, n_b)
        if _uniform(seed, <u64>(t + 1)) < pa:
            xi[t] = 1
            used += 1
            if not _laplace_update(u, S, V, t, <double>z[t], sv, work, k):
                raise NumericalError(f"belief update failed at stream position {t}")
            _min_rule_plan(u, V, tau, n_b, p, mixed, plan, suffix, capped, n, k)
    return xi_np, pi_np, pb_np, used
