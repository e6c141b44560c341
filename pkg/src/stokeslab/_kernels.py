"""Fused numba kernels for energy-form application on 2-d grids.

The generic numpy path in `operator.py` handles every dimension; these
kernels exist because the Monte Carlo sweeps apply the form thousands of
times on grids with 10^7+ nodes.  The divergence is recomputed on the fly
(register/row-buffer reuse) instead of being stored, which roughly halves
memory traffic; agreement with the numpy path to roundoff is asserted in
tests.
"""

from __future__ import annotations

import numpy as np
from numba import njit

__all__ = ["apply_scalar_2d", "apply_vector_2d"]


@njit(cache=True, fastmath=False)
def apply_scalar_2d(u, pot, beta, inv_s2, out):
    n0, n1 = u.shape
    for i in range(n0):
        for j in range(n1):
            v = 4.0 * u[i, j]
            if i > 0:
                v -= u[i - 1, j]
            if i < n0 - 1:
                v -= u[i + 1, j]
            if j > 0:
                v -= u[i, j - 1]
            if j < n1 - 1:
                v -= u[i, j + 1]
            out[i, j] = v * inv_s2 + beta * pot[i, j] * u[i, j]


@njit(cache=True, fastmath=False)
def apply_vector_2d(u0, u1, pot, beta, inv_alpha, inv_s, row_g, out0, out1):
    """Laplacian + alpha^-1 grad-div penalty + potential, forward differences.

    div g(i, j) = (u0[i+1,j] - u0[i,j] + u1[i,j+1] - u1[i,j]) / s with zero
    ghosts; its adjoint difference needs g at (i,j), (i-1,j), (i,j-1), which
    are carried in a scalar register and the one-row buffer ``row_g``
    (caller-provided scratch of length u0.shape[1]).
    """
    n0, n1 = u0.shape
    inv_s2 = inv_s * inv_s
    ia_s = inv_alpha * inv_s
    for j in range(n1):
        row_g[j] = 0.0  # adjoint zero fill below the first row
    for i in range(n0):
        g_left = 0.0  # adjoint zero fill left of the first column
        for j in range(n1):
            a = -u0[i, j]
            if i < n0 - 1:
                a += u0[i + 1, j]
            b = -u1[i, j]
            if j < n1 - 1:
                b += u1[i, j + 1]
            g_c = (a + b) * inv_s

            v0 = 4.0 * u0[i, j]
            v1 = 4.0 * u1[i, j]
            if i > 0:
                v0 -= u0[i - 1, j]
                v1 -= u1[i - 1, j]
            if i < n0 - 1:
                v0 -= u0[i + 1, j]
                v1 -= u1[i + 1, j]
            if j > 0:
                v0 -= u0[i, j - 1]
                v1 -= u1[i, j - 1]
            if j < n1 - 1:
                v0 -= u0[i, j + 1]
                v1 -= u1[i, j + 1]

            bv = beta * pot[i, j]
            out0[i, j] = v0 * inv_s2 + (row_g[j] - g_c) * ia_s + bv * u0[i, j]
            out1[i, j] = v1 * inv_s2 + (g_left - g_c) * ia_s + bv * u1[i, j]
            row_g[j] = g_c
            g_left = g_c
