"""Vertex-patch block smoothers (Gauss-Seidel and damped Jacobi)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .mesh import vertex_facet_incidence

INVERT_BATCH = 2048


def patch_dofs(mesh, k, fixed):
    """Free global DOFs on the facets touching each vertex.

    Returns ``(pptr, pdofs)`` in CSR form, one patch per vertex in
    ascending vertex order; empty patches are dropped.
    """
    kk = k + 1
    nFk = mesh.n_facets * kk
    fptr, fidx = vertex_facet_incidence(mesh)
    cnt = np.diff(fptr)
    # per vertex: normal DOFs of its facets, then tangential ones
    vert = np.repeat(np.arange(mesh.n_vertices), cnt)
    base = fidx[:, None] * kk + np.arange(kk)[None, :]  # (nInc, kk)
    # reorder so that for each vertex the normal block precedes the tangential
    nd = np.concatenate([base.ravel(), (nFk + base).ravel()])
    vv = np.concatenate([np.repeat(vert, kk), np.repeat(vert, kk)])
    part = np.concatenate([np.zeros(base.size, dtype=int), np.ones(base.size, dtype=int)])
    order = np.lexsort((nd, part, vv))
    nd, vv = nd[order], vv[order]
    keep = ~fixed[nd]
    nd, vv = nd[keep], vv[keep]
    counts = np.bincount(vv, minlength=mesh.n_vertices)
    counts = counts[counts > 0]
    pptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    return pptr, nd.astype(np.int64)


@dataclass(eq=False)
class PatchSmoother:
    """Dense inverses of the patch blocks of ``A``.

    Attributes
    ----------
    mode : ``"gs"`` or ``"jacobi"``
    damping : Jacobi damping ``varsigma``
    """

    A: object
    pptr: np.ndarray
    pdofs: np.ndarray
    iptr: np.ndarray
    inv: np.ndarray
    mode: str = "gs"
    damping: float = 1.0 / 3.0

    @property
    def n_patches(self):
        return len(self.pptr) - 1

    def smooth(self, g, u, steps=1, direction="forward"):
        """Apply ``steps`` sweeps in place and return ``u``."""
        A = self.A
        if self.mode == "gs":
            order = np.arange(self.n_patches)
            if direction == "backward":
                order = order[::-1].copy()
            for _ in range(steps):
                _kernels.patch_sweep(A.indptr, A.indices, A.data, g, u, self.pptr,
                                     self.pdofs, self.iptr, self.inv, order)
        else:
            for _ in range(steps):
                r = g - A @ u
                _kernels.patch_additive(r, u, self.pptr, self.pdofs, self.iptr, self.inv,
                                        self.damping)
        return u

    def apply_additive(self, r):
        """``sum_s E_s A_s^-1 E_s^T r`` (undamped)."""
        out = np.zeros_like(r)
        _kernels.patch_additive(r, out, self.pptr, self.pdofs, self.iptr, self.inv, 1.0)
        return out


def build_patch_smoother(A, pptr, pdofs, mode="gs", damping=1.0 / 3.0, n=None):
    """Factor the patch blocks of CSR ``A`` (inverses stored densely)."""
    if mode not in ("gs", "jacobi"):
        raise ValueError(f"unknown smoother mode {mode!r}")
    n = A.shape[0] if n is None else n
    sizes = np.diff(pptr)
    iptr = np.concatenate([[0], np.cumsum(sizes.astype(np.int64) ** 2)])
    blocks = np.zeros(iptr[-1])
    lookup = np.full(n, -1, dtype=np.int64)
    _kernels.gather_blocks(A.indptr, A.indices.astype(np.int64) if A.indices.dtype != np.int32
                           else A.indices, A.data, pptr, pdofs, iptr, blocks, lookup)
    for m in np.unique(sizes):
        if m == 0:
            continue
        group = np.flatnonzero(sizes == m)
        # batches keep the index and copy arrays small on fine meshes
        for a in range(0, len(group), INVERT_BATCH):
            sel = group[a:a + INVERT_BATCH]
            idx = iptr[sel][:, None] + np.arange(m * m)[None, :]
            try:
                inv = np.linalg.inv(blocks[idx].reshape(-1, m, m))
            except np.linalg.LinAlgError as exc:
                raise np.linalg.LinAlgError("singular patch block") from exc
            if not np.all(np.isfinite(inv)):
                raise np.linalg.LinAlgError("singular patch block")
            blocks[idx] = inv.reshape(len(sel), -1)
    return PatchSmoother(A, pptr, pdofs, iptr, blocks, mode, damping)


def smoother_for(A, mesh, k, fixed, mode="gs", damping=1.0 / 3.0):
    pptr, pdofs = patch_dofs(mesh, k, fixed)
    covered = np.zeros(A.shape[0], dtype=bool)
    covered[pdofs] = True
    if not np.array_equal(covered, ~fixed):
        raise AssertionError("patches do not cover the free DOFs")
    return build_patch_smoother(A, pptr, pdofs, mode, damping)
