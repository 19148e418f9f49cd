"""Compiled inner loop for the slab integrator.

The kernel repeats, element by element, the field-coupled right-hand side
used in :mod:`photonlock.atom` with the pulse acting on the 1-3 transition.
Every sum runs in a fixed order, so results are reproducible bit for bit.
"""

import numba
import numpy as np


@numba.njit(cache=True)
def _local_fields(src_rho, w, fin, kdz, direction, omega):
    nz, n = src_rho.shape[0], src_rho.shape[1]
    run = 0j
    for k in range(nz):
        z = k if direction == 1 else nz - 1 - k
        acc = 0j
        for j in range(n):
            acc += w[j] * src_rho[z, j, 2, 0]
        src = -1j * kdz * acc
        # upstream sum of slice sources plus half of the slice's own
        omega[z] = fin + run + 0.5 * src
        run += src


@numba.njit(cache=True)
def _stage(base, rho, lam, omega, g31p, g32p, gop, k12, k21, coef, dst, acc, acc_coef, first):
    """dst = base + coef * f(rho); acc (+)= acc_coef * f(rho)."""
    nz, n = rho.shape[0], rho.shape[1]
    for z in range(nz):
        c = 0.5 * omega[z]
        cc = np.conj(c)
        ic = 1j * c
        icc = 1j * cc
        for j in range(n):
            r00, r01, r02 = rho[z, j, 0, 0], rho[z, j, 0, 1], rho[z, j, 0, 2]
            r10, r11, r12 = rho[z, j, 1, 0], rho[z, j, 1, 1], rho[z, j, 1, 2]
            r20, r21, r22 = rho[z, j, 2, 0], rho[z, j, 2, 1], rho[z, j, 2, 2]
            # free part, then -i[V, rho] with V[2,0] = c and V[0,2] = conj(c)
            d00 = g31p * r22 + k21 * r11 - k12 * r00 - icc * r20 + ic * r02
            d01 = lam[j, 0, 1] * r01 - icc * r21
            d02 = lam[j, 0, 2] * r02 - icc * r22 + icc * r00
            d10 = lam[j, 1, 0] * r10 + ic * r12
            d11 = g32p * r22 + k12 * r00 - k21 * r11
            d12 = lam[j, 1, 2] * r12 + icc * r10
            d20 = lam[j, 2, 0] * r20 - ic * r00 + ic * r22
            d21 = lam[j, 2, 1] * r21 - ic * r01
            d22 = -gop * r22 - ic * r02 + icc * r20
            d = (d00, d01, d02, d10, d11, d12, d20, d21, d22)
            for k in range(9):
                a = k // 3
                b = k % 3
                if coef != 0.0:
                    dst[z, j, a, b] = base[z, j, a, b] + coef * d[k]
                if first:
                    acc[z, j, a, b] = acc_coef * d[k]
                else:
                    acc[z, j, a, b] += acc_coef * d[k]


@numba.njit(cache=True)
def _exit(rho, w, fin, kdz):
    s = 0j
    for z in range(rho.shape[0]):
        for j in range(rho.shape[1]):
            s += w[j] * rho[z, j, 2, 0]
    return fin - 1j * kdz * s


@numba.njit(cache=True)
def _excited(rho, w):
    s = 0.0
    for z in range(rho.shape[0]):
        for j in range(rho.shape[1]):
            s += w[j] * rho[z, j, 2, 2].real
    return s


@numba.njit(cache=True)
def slab_rk4(rho, lam, w, f_node, f_mid, h, kdz, direction, g31p, g32p, gop, k12, k21):
    """Integrate ``len(f_node) - 1`` RK4 steps in place.

    Returns the exit field and the weighted excited population at every node.
    """
    n_steps = f_node.size - 1
    nz = rho.shape[0]
    tmp = np.empty_like(rho)
    tmp2 = np.empty_like(rho)
    acc = np.empty_like(rho)
    omega = np.empty(nz, dtype=np.complex128)
    out = np.empty(n_steps + 1, dtype=np.complex128)
    exc = np.empty(n_steps + 1)
    out[0] = _exit(rho, w, f_node[0], kdz)
    exc[0] = _excited(rho, w)
    h6 = h / 6.0
    for i in range(n_steps):
        _local_fields(rho, w, f_node[i], kdz, direction, omega)
        _stage(rho, rho, lam, omega, g31p, g32p, gop, k12, k21, 0.5 * h, tmp, acc, h6, True)
        _local_fields(tmp, w, f_mid[i], kdz, direction, omega)
        _stage(rho, tmp, lam, omega, g31p, g32p, gop, k12, k21, 0.5 * h, tmp2, acc, 2.0 * h6, False)
        _local_fields(tmp2, w, f_mid[i], kdz, direction, omega)
        _stage(rho, tmp2, lam, omega, g31p, g32p, gop, k12, k21, h, tmp, acc, 2.0 * h6, False)
        _local_fields(tmp, w, f_node[i + 1], kdz, direction, omega)
        _stage(rho, tmp, lam, omega, g31p, g32p, gop, k12, k21, 0.0, tmp2, acc, h6, False)
        rho += acc
        out[i + 1] = _exit(rho, w, f_node[i + 1], kdz)
        exc[i + 1] = _excited(rho, w)
    return out, exc
