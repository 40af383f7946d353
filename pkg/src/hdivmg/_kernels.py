"""Compiled inner loops shared by assembly and the smoothers."""

import os

import numba
import numpy as np
from numba import njit

_threads = os.environ.get("HDIVMG_THREADS")
if _threads:
    numba.set_num_threads(max(1, min(int(_threads), numba.config.NUMBA_NUM_THREADS)))


@njit(cache=True)
def scatter_add(data, pos, vals):
    for i in range(pos.size):
        data[pos[i]] += vals[i]


@njit(cache=True)
def patch_sweep(indptr, indices, data, rhs, u, pptr, pdofs, iptr, inv, order):
    """Multiplicative block relaxation over the patches in ``order``."""
    nmax = 0
    for s in range(len(pptr) - 1):
        nmax = max(nmax, pptr[s + 1] - pptr[s])
    r = np.empty(nmax)
    for s in order:
        a, b = pptr[s], pptr[s + 1]
        m = b - a
        for ii in range(m):
            i = pdofs[a + ii]
            acc = rhs[i]
            for p in range(indptr[i], indptr[i + 1]):
                acc -= data[p] * u[indices[p]]
            r[ii] = acc
        base = iptr[s]
        for ii in range(m):
            acc = 0.0
            for jj in range(m):
                acc += inv[base + ii * m + jj] * r[jj]
            u[pdofs[a + ii]] += acc


@njit(cache=True)
def patch_additive(res, out, pptr, pdofs, iptr, inv, scale):
    """``out += scale * sum_s E_s A_s^{-1} E_s^T res``."""
    nmax = 0
    for s in range(len(pptr) - 1):
        nmax = max(nmax, pptr[s + 1] - pptr[s])
    r = np.empty(nmax)
    for s in range(len(pptr) - 1):
        a, b = pptr[s], pptr[s + 1]
        m = b - a
        for ii in range(m):
            r[ii] = res[pdofs[a + ii]]
        base = iptr[s]
        for ii in range(m):
            acc = 0.0
            for jj in range(m):
                acc += inv[base + ii * m + jj] * r[jj]
            out[pdofs[a + ii]] += scale * acc


@njit(cache=True)
def gather_blocks(indptr, indices, data, pptr, pdofs, iptr, out, lookup):
    """Copy the dense patch blocks of a CSR matrix into ``out``.

    ``lookup`` is a work array of length n filled with -1.
    """
    for s in range(len(pptr) - 1):
        a, b = pptr[s], pptr[s + 1]
        m = b - a
        for ii in range(m):
            lookup[pdofs[a + ii]] = ii
        base = iptr[s]
        for ii in range(m):
            i = pdofs[a + ii]
            for p in range(indptr[i], indptr[i + 1]):
                jj = lookup[indices[p]]
                if jj >= 0:
                    out[base + ii * m + jj] = data[p]
        for ii in range(m):
            lookup[pdofs[a + ii]] = -1
