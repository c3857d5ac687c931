"""Compiled loops for lattice products that are too large to tabulate.

Fields are passed in a compressed layout: spatial support points
``(jx, jy)`` (centred lattice indices) with, per point, a run of
``(sigma index, coefficient)`` entries delimited by ``ptr``.
"""
from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def _resonance_shift(jx1, jy1, jx2, jy2, hx, hy, hs):
    xi1 = jx1 * hx
    mu1 = jy1 * hy
    xi2 = jx2 * hx
    mu2 = jy2 * hy
    xi0 = xi1 + xi2
    mu0 = mu1 + mu2
    H = (xi0 * (xi0 * xi0 + mu0 * mu0) - xi1 * (xi1 * xi1 + mu1 * mu1)
         - xi2 * (xi2 * xi2 + mu2 * mu2))
    return np.rint(-H / hs)


@njit(cache=True)
def shift_range(jx1, jy1, jx2, jy2, hx, hy, hs):
    """Min and max of ``rint(-H / hs)`` over all spatial pairs."""
    kmin = 1 << 62
    kmax = -(1 << 62)
    for p in range(jx1.shape[0]):
        for q in range(jx2.shape[0]):
            k = int(_resonance_shift(jx1[p], jy1[p], jx2[q], jy2[q], hx, hy, hs))
            if k < kmin:
                kmin = k
            if k > kmax:
                kmax = k
    return kmin, kmax


@njit(cache=True)
def weighted_product_sq(n, jx1, jy1, ptr1, s1, v1, map2, ptr2, s2, v2,
                        hx, hy, hs, s0_min, w_space, w_sigma):
    """``sum_out w_space[x0] w_sigma[s0] |sum_pairs v1 v2|^2``.

    Output spatial points are visited one at a time; the sigma profile of
    each is accumulated in a reusable buffer, so memory stays O(n + span).
    ``map2[ix, iy]`` is the position of lattice point ``(ix, iy)`` in the
    second support, or -1.  ``w_space`` is indexed by ``(jx0 + n, jy0 + n)``
    and ``w_sigma`` by ``s0 - s0_min``.
    """
    half = n // 2
    span = w_sigma.shape[0]
    buf = np.zeros(span, dtype=np.complex128)
    total = 0.0
    for jx0 in range(-n, n - 1):
        for jy0 in range(-n, n - 1):
            lo = span
            hi = -1
            for p in range(jx1.shape[0]):
                jx2 = jx0 - jx1[p]
                jy2 = jy0 - jy1[p]
                if jx2 < -half or jx2 >= half or jy2 < -half or jy2 >= half:
                    continue
                q = map2[jx2 + half, jy2 + half]
                if q < 0:
                    continue
                k = int(_resonance_shift(jx1[p], jy1[p], jx2, jy2, hx, hy, hs))
                for a in range(ptr1[p], ptr1[p + 1]):
                    for b in range(ptr2[q], ptr2[q + 1]):
                        idx = s1[a] + s2[b] + k - s0_min
                        buf[idx] += v1[a] * v2[b]
                        if idx < lo:
                            lo = idx
                        if idx > hi:
                            hi = idx
            if hi < 0:
                continue
            acc = 0.0
            for i in range(lo, hi + 1):
                z = buf[i]
                acc += w_sigma[i] * (z.real * z.real + z.imag * z.imag)
                buf[i] = 0.0
            total += w_space[jx0 + n, jy0 + n] * acc
    return total
