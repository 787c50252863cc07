"""Fused numba kernels for the matrix-form generators.

Each kernel makes one pass over the density matrix; the numpy equivalents
in ``dynamics`` and ``envelope`` remain the reference implementations.
"""

import numba
import numpy as np


@numba.njit(cache=True)
def lindblad_kernel(rho, out, diag_coef, cp, gamma, omega):
    d = rho.shape[0]
    hw = -0.5j * omega
    # edge rows/columns use a zero coefficient and a clamped index instead of branches
    for a in range(d):
        ca_m = cp[a - 1] if a > 0 else 0.0
        ca_p = cp[a] if a < d - 1 else 0.0
        am = a - 1 if a > 0 else 0
        ap = a + 1 if a < d - 1 else a
        for b in range(d):
            cb_m = cp[b - 1] if b > 0 else 0.0
            cb_p = cp[b] if b < d - 1 else 0.0
            bm = b - 1 if b > 0 else 0
            bp = b + 1 if b < d - 1 else b
            acc = diag_coef[a, b] * rho[a, b] + gamma * ca_p * cb_p * rho[ap, bp]
            comm = ca_m * rho[am, b] + ca_p * rho[ap, b] - cb_m * rho[a, bm] - cb_p * rho[a, bp]
            out[a, b] = acc + hw * comm
    return out


@numba.njit(cache=True)
def _tri_left(a, sub, sup, out):
    """out = M a for M with M[k+1, k] = sub[k], M[k, k+1] = sup[k] and zero diagonal."""
    d = a.shape[0]
    for i in range(d):
        for j in range(d):
            acc = 0j
            if i > 0:
                acc += sub[i - 1] * a[i - 1, j]
            if i < d - 1:
                acc += sup[i] * a[i + 1, j]
            out[i, j] = acc
    return out


@numba.njit(cache=True)
def _tri_right(a, sub, sup, out):
    """out = a M for the same zero-diagonal tridiagonal M."""
    d = a.shape[0]
    for i in range(d):
        for j in range(d):
            acc = 0j
            if j > 0:
                acc += a[i, j - 1] * sup[j - 1]
            if j < d - 1:
                acc += a[i, j + 1] * sub[j]
            out[i, j] = acc
    return out


@numba.njit(cache=True)
def averaged_kernel(rho, out, x_band, y_sub, y_sup, dm2, chi, gamma):
    """Drive-averaged generator; x_band holds the symmetric Jx off-diagonal."""
    x = np.empty_like(rho)
    y = np.empty_like(rho)
    t1 = np.empty_like(rho)
    t2 = np.empty_like(rho)
    t3 = np.empty_like(rho)
    _tri_left(rho, x_band, x_band, x)  # Jx rho
    _tri_right(rho, x_band, x_band, y)  # rho Jx
    _tri_left(x, x_band, x_band, t1)  # Jx^2 rho
    _tri_right(y, x_band, x_band, t2)  # rho Jx^2
    _tri_right(x, x_band, x_band, t3)  # Jx rho Jx
    hc = -0.5j * chi
    hg = 0.5 * gamma
    qg = 0.25 * gamma
    d = rho.shape[0]
    for i in range(d):
        for j in range(d):
            out[i, j] = hc * (t1[i, j] - t2[i, j]) + hg * (2 * t3[i, j] - t1[i, j] - t2[i, j]) - qg * dm2[i, j] * rho[i, j]
    _tri_left(rho, y_sub, y_sup, x)  # Jy rho
    _tri_right(rho, y_sub, y_sup, y)  # rho Jy
    _tri_left(x, y_sub, y_sup, t1)
    _tri_right(y, y_sub, y_sup, t2)
    _tri_right(x, y_sub, y_sup, t3)
    for i in range(d):
        for j in range(d):
            out[i, j] += qg * (2 * t3[i, j] - t1[i, j] - t2[i, j])
    return out


@numba.njit(cache=True)
def stage_combination(y, h, coeffs, ks, n, out):
    """out = y + h * sum_{j<n} coeffs[j] * ks[j]."""
    flat_y = y.reshape(-1)
    flat_o = out.reshape(-1)
    m = flat_y.shape[0]
    kf = ks.reshape(ks.shape[0], m)
    for i in range(m):
        acc = 0j
        for j in range(n):
            c = coeffs[j]
            if c != 0.0:
                acc += c * kf[j, i]
        flat_o[i] = flat_y[i] + h * acc
    return out


def warm_up():
    rho = np.eye(2, dtype=np.complex128)
    lindblad_kernel(rho, np.empty_like(rho), np.zeros((2, 2), np.complex128), np.ones(1), 1.0, 1.0)
    band = np.ones(1, np.complex128)
    averaged_kernel(rho, np.empty_like(rho), band, band, band, np.zeros((2, 2)), 1.0, 1.0)
    stage_combination(rho, 0.1, np.ones(2), np.zeros((2, 2, 2), np.complex128), 2, np.empty_like(rho))
