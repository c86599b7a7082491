# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops. Mirrors ``_fallback`` function for function.

Density matrices are passed in packed form: two (N+2, N+2) float64 arrays A
and B holding Re(rho) and Im(rho) on and above the diagonal, logical entry
(y, x) stored at [y+1, x+1]. Row 0 and column N+1 are a zero border and the
strict lower triangle is never read.
"""

import numpy as np


cdef void _rk4_stage(double[:, ::1] sa, double[:, ::1] sb,
                     double[:, ::1] ra, double[:, ::1] rb,
                     double[:, ::1] aa, double[:, ::1] ab,
                     double[:, ::1] da, double[:, ::1] db,
                     const double[::1] eps, const double[::1] dec,
                     double t, double w, double c, int mode, int n) noexcept nogil:
    # mode 0: acc = rho + w*k, 1: acc += w*k, 2: rho = acc + w*k (no dst)
    cdef Py_ssize_t Y, X
    cdef double e, ga, gb, de, dd, sA, sB
    for Y in range(1, n + 1):
        # diagonal: commutator term reduces to 2T(B[y-1,y] - B[y,y+1]); f(x,x) = 0
        ga = 2.0 * t * (sb[Y - 1, Y] - sb[Y, Y + 1])
        if mode == 0:
            aa[Y, Y] = ra[Y, Y] + w * ga
            ab[Y, Y] = 0.0
        elif mode == 1:
            aa[Y, Y] += w * ga
        else:
            ra[Y, Y] = aa[Y, Y] + w * ga
        if mode != 2:
            da[Y, Y] = ra[Y, Y] + c * ga
            db[Y, Y] = 0.0
        e = eps[Y - 1]
        for X in range(Y + 1, n + 1):
            de = eps[X - 1] - e
            dd = dec[X - Y]
            sA = sa[Y - 1, X] + sa[Y + 1, X] - sa[Y, X - 1] - sa[Y, X + 1]
            sB = sb[Y - 1, X] + sb[Y + 1, X] - sb[Y, X - 1] - sb[Y, X + 1]
            ga = -de * sb[Y, X] + t * sB - dd * sa[Y, X]
            gb = de * sa[Y, X] - t * sA - dd * sb[Y, X]
            if mode == 0:
                aa[Y, X] = ra[Y, X] + w * ga
                ab[Y, X] = rb[Y, X] + w * gb
            elif mode == 1:
                aa[Y, X] += w * ga
                ab[Y, X] += w * gb
            else:
                ra[Y, X] = aa[Y, X] + w * ga
                rb[Y, X] = ab[Y, X] + w * gb
            if mode != 2:
                da[Y, X] = ra[Y, X] + c * ga
                db[Y, X] = rb[Y, X] + c * gb


def rk4_advance(double[:, ::1] A, double[:, ::1] B, const double[::1] eps,
                const double[::1] dec, double tunneling, double h, long nsteps):
    """Classical RK4 steps of the site-basis Lindblad equation, in place."""
    cdef int n = A.shape[0] - 2
    cdef long it
    if nsteps <= 0:
        return
    bufs = np.zeros((6, n + 2, n + 2))
    cdef double[:, ::1] aa = bufs[0], ab = bufs[1]
    cdef double[:, ::1] s1a = bufs[2], s1b = bufs[3], s2a = bufs[4], s2b = bufs[5]
    with nogil:
        for it in range(nsteps):
            _rk4_stage(A, B, A, B, aa, ab, s1a, s1b, eps, dec, tunneling, h / 6, h / 2, 0, n)
            _rk4_stage(s1a, s1b, A, B, aa, ab, s2a, s2b, eps, dec, tunneling, h / 3, h / 2, 1, n)
            _rk4_stage(s2a, s2b, A, B, aa, ab, s1a, s1b, eps, dec, tunneling, h / 3, h, 1, n)
            _rk4_stage(s1a, s1b, A, B, aa, ab, s2a, s2b, eps, dec, tunneling, h / 6, 0.0, 2, n)


cdef void _lawson_stage(double[:, ::1] sa, double[:, ::1] sb,
                        double[:, ::1] ra, double[:, ::1] rb,
                        double[:, ::1] aa, double[:, ::1] ab,
                        double[:, ::1] da, double[:, ::1] db,
                        double[:, ::1] er, double[:, ::1] ei,
                        double[:, ::1] hr, double[:, ::1] hi,
                        double t, double h, int mode, int n) noexcept nogil:
    # hopping-only stages of integrating-factor RK4; E = exp(L h), Eh = exp(L h/2)
    cdef Py_ssize_t Y, X
    cdef double ga, gb, pa, pb, qa, qb
    cdef double h6 = h / 6.0, h3 = h / 3.0, h2 = h / 2.0
    for Y in range(1, n + 1):
        # diagonal: E = Eh = 1, imaginary part identically zero
        ga = 2.0 * t * (sb[Y - 1, Y] - sb[Y, Y + 1])
        if mode == 0:
            aa[Y, Y] = ra[Y, Y] + h6 * ga
            da[Y, Y] = ra[Y, Y] + h2 * ga
        elif mode == 1:
            aa[Y, Y] += h3 * ga
            da[Y, Y] = ra[Y, Y] + h2 * ga
        elif mode == 2:
            aa[Y, Y] += h3 * ga
            da[Y, Y] = ra[Y, Y] + h * ga
        else:
            ra[Y, Y] = aa[Y, Y] + h6 * ga
        for X in range(Y + 1, n + 1):
            ga = t * (sb[Y - 1, X] + sb[Y + 1, X] - sb[Y, X - 1] - sb[Y, X + 1])
            gb = -t * (sa[Y - 1, X] + sa[Y + 1, X] - sa[Y, X - 1] - sa[Y, X + 1])
            if mode == 0:
                pa = ra[Y, X] + h6 * ga
                pb = rb[Y, X] + h6 * gb
                aa[Y, X] = er[Y, X] * pa - ei[Y, X] * pb
                ab[Y, X] = er[Y, X] * pb + ei[Y, X] * pa
                pa = ra[Y, X] + h2 * ga
                pb = rb[Y, X] + h2 * gb
                da[Y, X] = hr[Y, X] * pa - hi[Y, X] * pb
                db[Y, X] = hr[Y, X] * pb + hi[Y, X] * pa
            elif mode == 1:
                aa[Y, X] += h3 * (hr[Y, X] * ga - hi[Y, X] * gb)
                ab[Y, X] += h3 * (hr[Y, X] * gb + hi[Y, X] * ga)
                da[Y, X] = hr[Y, X] * ra[Y, X] - hi[Y, X] * rb[Y, X] + h2 * ga
                db[Y, X] = hr[Y, X] * rb[Y, X] + hi[Y, X] * ra[Y, X] + h2 * gb
            elif mode == 2:
                qa = hr[Y, X] * ga - hi[Y, X] * gb
                qb = hr[Y, X] * gb + hi[Y, X] * ga
                aa[Y, X] += h3 * qa
                ab[Y, X] += h3 * qb
                da[Y, X] = er[Y, X] * ra[Y, X] - ei[Y, X] * rb[Y, X] + h * qa
                db[Y, X] = er[Y, X] * rb[Y, X] + ei[Y, X] * ra[Y, X] + h * qb
            else:
                ra[Y, X] = aa[Y, X] + h6 * ga
                rb[Y, X] = ab[Y, X] + h6 * gb


def lawson_advance(double[:, ::1] A, double[:, ::1] B,
                   double[:, ::1] er, double[:, ::1] ei,
                   double[:, ::1] hr, double[:, ::1] hi,
                   double tunneling, double h, long nsteps):
    """Integrating-factor RK4 steps; onsite phases and dephasing exact."""
    cdef int n = A.shape[0] - 2
    cdef long it
    if nsteps <= 0:
        return
    bufs = np.zeros((6, n + 2, n + 2))
    cdef double[:, ::1] aa = bufs[0], ab = bufs[1]
    cdef double[:, ::1] s1a = bufs[2], s1b = bufs[3], s2a = bufs[4], s2b = bufs[5]
    with nogil:
        for it in range(nsteps):
            _lawson_stage(A, B, A, B, aa, ab, s1a, s1b, er, ei, hr, hi, tunneling, h, 0, n)
            _lawson_stage(s1a, s1b, A, B, aa, ab, s2a, s2b, er, ei, hr, hi, tunneling, h, 1, n)
            _lawson_stage(s2a, s2b, A, B, aa, ab, s1a, s1b, er, ei, hr, hi, tunneling, h, 2, n)
            _lawson_stage(s1a, s1b, A, B, aa, ab, s2a, s2b, er, ei, hr, hi, tunneling, h, 3, n)


cdef double _prefix_form(const double[::1] u, const double[::1] v,
                         const double[::1] coeffs, double[::1] acc) noexcept nogil:
    # 2 * sum_{x>y} d(x-y) g_x g_y with g = u*v and d(k) = sum_m coeffs[m] C(k, m+1)
    cdef Py_ssize_t n = u.shape[0], q = coeffs.shape[0], x, k
    cdef double g, r, total = 0.0
    for k in range(q + 1):
        acc[k] = 0.0
    for x in range(n):
        g = u[x] * v[x]
        for k in range(q, 0, -1):
            acc[k] += acc[k - 1]
        acc[0] += g
        r = 0.0
        for k in range(1, q + 1):
            r += coeffs[k - 1] * acc[k]
        total += g * r
    return 2.0 * total


def quadratic_form_prefix(const double[::1] g, const double[::1] coeffs):
    """sum_{x,y} |x-y|**q g_x g_y via iterated prefix sums, O(q N)."""
    cdef Py_ssize_t n = g.shape[0]
    ones = np.ones(n)
    acc = np.zeros(coeffs.shape[0] + 1)
    return _prefix_form(g, ones, coeffs, acc)


def coupling_matrix_prefix(const double[:, ::1] vt, const double[::1] coeffs):
    """eta_ij for a power-law profile; ``vt`` rows are eigenvectors."""
    cdef Py_ssize_t n = vt.shape[0], i, j
    eta = np.zeros((n, n))
    acc_arr = np.zeros(coeffs.shape[0] + 1)
    cdef double[:, ::1] out = eta
    cdef double[::1] acc = acc_arr
    cdef double val
    with nogil:
        for i in range(n):
            for j in range(i, n):
                val = _prefix_form(vt[i], vt[j], coeffs, acc)
                out[i, j] = val
                out[j, i] = val
    return eta


def peak_prominences(const double[::1] p, double floor):
    """Interior strict maxima (plateaus reported at their leftmost site).

    Returns (sites, heights, left, right) as numpy arrays.
    """
    cdef Py_ssize_t n = p.shape[0], i, j, k, cnt = 0
    cdef double hgt, m
    sites_arr = np.empty(n, dtype=np.int64)
    cdef long long[::1] sites = sites_arr
    i = 1
    while i < n - 1:
        if p[i] > p[i - 1]:
            j = i
            while j + 1 < n and p[j + 1] == p[i]:
                j += 1
            if j + 1 < n and p[j + 1] < p[i]:
                if p[i] >= floor:
                    sites[cnt] = i
                    cnt += 1
            i = j + 1
        else:
            i += 1
    heights_arr = np.empty(cnt)
    left_arr = np.empty(cnt)
    right_arr = np.empty(cnt)
    cdef double[::1] hv = heights_arr, lv = left_arr, rv = right_arr
    for k in range(cnt):
        i = sites[k]
        hgt = p[i]
        m = hgt
        j = i - 1
        while j >= 0 and p[j] <= hgt:
            if p[j] < m:
                m = p[j]
            j -= 1
        lv[k] = hgt - m
        m = hgt
        j = i + 1
        while j < n and p[j] <= hgt:
            if p[j] < m:
                m = p[j]
            j += 1
        rv[k] = hgt - m
        hv[k] = hgt
    return sites_arr[:cnt].copy(), heights_arr, left_arr, right_arr
