"""Pure numpy versions of the compiled kernels in ``_kernels.pyx``.

Same signatures and packed layout; used when the extension is not built or
when ``ANDERSON_DEPHASE_PURE=1`` is set.
"""

from __future__ import annotations

import numpy as np


def _unpack(A, B):
    n = A.shape[0] - 2
    a = np.triu(A[1:-1, 1:-1])
    b = np.triu(B[1:-1, 1:-1], 1)
    return (a + np.triu(a, 1).T) + 1j * (b - b.T), n


def _pack(rho, A, B):
    A[1:-1, 1:-1] = np.triu(rho.real)
    B[1:-1, 1:-1] = np.triu(rho.imag, 1)


def _hopping(rho, t):
    # -i T [S, rho] with S the nearest-neighbour shift, open ends
    s = np.zeros_like(rho)
    s[1:, :] += rho[:-1, :]
    s[:-1, :] += rho[1:, :]
    s[:, 1:] -= rho[:, :-1]
    s[:, :-1] -= rho[:, 1:]
    return -1j * t * s


def _hermitize(d):
    return 0.5 * (d + d.conj().T)


def rk4_advance(A, B, eps, dec, tunneling, h, nsteps):
    if nsteps <= 0:
        return
    rho, n = _unpack(A, B)
    eps = np.asarray(eps)
    idx = np.arange(n)
    coef = -1j * (eps[:, None] - eps[None, :]) - np.asarray(dec)[np.abs(idx[:, None] - idx[None, :])]

    def rhs(r):
        return _hermitize(coef * r + _hopping(r, tunneling))

    for _ in range(int(nsteps)):
        k1 = rhs(rho)
        k2 = rhs(rho + 0.5 * h * k1)
        k3 = rhs(rho + 0.5 * h * k2)
        k4 = rhs(rho + h * k3)
        rho = rho + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
    _pack(rho, A, B)


def _expand(er, ei):
    # packed upper-triangle coefficients for entry (y, x), y <= x -> full matrix
    e = np.triu(er[1:-1, 1:-1] + 1j * ei[1:-1, 1:-1], 1)
    return e + e.conj().T + np.eye(e.shape[0])


def lawson_advance(A, B, er, ei, hr, hi, tunneling, h, nsteps):
    if nsteps <= 0:
        return
    rho, _ = _unpack(A, B)
    E = _expand(er, ei)
    Eh = _expand(hr, hi)

    def nl(r):
        return _hermitize(_hopping(r, tunneling))

    for _ in range(int(nsteps)):
        k1 = nl(rho)
        k2 = nl(Eh * (rho + 0.5 * h * k1))
        k3 = nl(Eh * rho + 0.5 * h * k2)
        k4 = nl(E * rho + h * Eh * k3)
        rho = E * rho + (h / 6) * (E * k1 + 2 * Eh * (k2 + k3) + k4)
    _pack(rho, A, B)


def _iterated_prefix(G, coeffs):
    # G: (N, m) columns g; returns 2 * sum_x g_x R_x per column
    u = np.cumsum(G, axis=0)
    r = np.zeros_like(G)
    for c in coeffs:
        shifted = np.zeros_like(u)
        shifted[1:] = np.cumsum(u, axis=0)[:-1]
        u = shifted
        r += c * u
    return 2.0 * np.sum(G * r, axis=0)


def quadratic_form_prefix(g, coeffs):
    g = np.asarray(g, dtype=float)
    return float(_iterated_prefix(g[:, None], np.asarray(coeffs))[0])


def coupling_matrix_prefix(vt, coeffs):
    vt = np.asarray(vt, dtype=float)
    n = vt.shape[0]
    coeffs = np.asarray(coeffs)
    eta = np.zeros((n, n))
    for i in range(n):
        G = (vt[i][None, :] * vt[i:]).T
        row = _iterated_prefix(G, coeffs)
        eta[i, i:] = row
        eta[i:, i] = row
    return eta


def peak_prominences(p, floor):
    p = np.asarray(p, dtype=float)
    n = len(p)
    vals = p.tolist()
    sites = []
    i = 1
    while i < n - 1:
        if vals[i] > vals[i - 1]:
            j = i
            while j + 1 < n and vals[j + 1] == vals[i]:
                j += 1
            if j + 1 < n and vals[j + 1] < vals[i] and vals[i] >= floor:
                sites.append(i)
            i = j + 1
        else:
            i += 1
    heights, left, right = [], [], []
    for i in sites:
        hgt = vals[i]
        m = hgt
        j = i - 1
        while j >= 0 and vals[j] <= hgt:
            m = min(m, vals[j])
            j -= 1
        left.append(hgt - m)
        m = hgt
        j = i + 1
        while j < n and vals[j] <= hgt:
            m = min(m, vals[j])
            j += 1
        right.append(hgt - m)
        heights.append(hgt)
    return (
        np.asarray(sites, dtype=np.int64),
        np.asarray(heights, dtype=float),
        np.asarray(left, dtype=float),
        np.asarray(right, dtype=float),
    )
