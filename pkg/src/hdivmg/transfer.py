"""Inter-level and inter-order transfer operators.

All h-transfers act on the lowest-order compound vector ``[flux | tang]``
(one normal and one tangential DOF per facet).  The averaging operator goes
through the CR picture: the coarse compound vector is turned into midpoint
values ``c_n n_F + c_t t_F``, the resulting piecewise linear field is
evaluated at fine facet midpoints (averaging the two sides on the coarse
skeleton) and projected back onto the fine normal and tangent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .mesh import FacetClass, FacetTag


def _barycentric(mesh, elems, pts):
    v = mesh.vertices[mesh.elements[elems]]
    J = np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]], axis=-1)
    ref = np.linalg.solve(J, (pts - v[:, 0])[..., None])[..., 0]
    return np.column_stack([1 - ref.sum(1), ref[:, 0], ref[:, 1]])


def build_averaging(coarse, fine, refinement):
    """Averaging prolongation ``I_avg`` (fine x coarse, CSR).

    Rows of fine DOFs on Dirichlet facets are zero.
    """
    nFc, nFf = coarse.n_facets, fine.n_facets
    cls = refinement.facet_class
    par = refinement.facet_parent
    f_all = np.arange(nFf)
    # (fine facet, coarse element, weight) triples
    skel = f_all[cls != FacetClass.INTERIOR_OF_COARSE_ELEMENT]
    inter = f_all[cls == FacetClass.INTERIOR_OF_COARSE_ELEMENT]
    ce = coarse.facet_elements[par[skel]]
    two = ce[:, 1] >= 0
    tf = [inter, skel, skel[two]]
    tk = [par[inter], ce[:, 0], ce[two, 1]]
    tw = [np.ones(len(inter)), np.where(two, 0.5, 1.0), np.full(two.sum(), 0.5)]
    f = np.concatenate(tf)
    K = np.concatenate(tk)
    w = np.concatenate(tw)
    keep = fine.boundary_tags[f] != FacetTag.DIRICHLET
    f, K, w = f[keep], K[keep], w[keep]

    lam = _barycentric(coarse, K, fine.facet_midpoints[f])
    psi = 1.0 - 2.0 * lam  # CR basis values, (m, 3)
    Fc = coarse.element_facets[K]  # (m, 3)
    nf, tfv = fine.facet_normals[f], fine.facet_tangents[f]
    nc, tc = coarse.facet_normals[Fc], coarse.facet_tangents[Fc]  # (m, 3, 2)
    rows, cols, vals = [], [], []
    for row_off, dirf in ((0, nf), (nFf, tfv)):
        for col_off, dirc in ((0, nc), (nFc, tc)):
            c = np.einsum("mc,mjc->mj", dirf, dirc) * psi * w[:, None]
            rows.append(np.repeat(row_off + f, 3))
            cols.append((col_off + Fc).ravel())
            vals.append(c.ravel())
    I = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(2 * nFf, 2 * nFc))
    I.sum_duplicates()
    return I


def interior_dofs(fine, refinement):
    """``(n_coarse_elements, 6)`` fine DOFs interior to each coarse element.

    Columns: the three interior fine facets' normal DOFs, then tangential.
    """
    cls = refinement.facet_class
    inter = np.flatnonzero(cls == FacetClass.INTERIOR_OF_COARSE_ELEMENT)
    par = refinement.facet_parent[inter]
    order = np.argsort(par, kind="stable")
    facets = inter[order].reshape(-1, 3)
    return np.concatenate([facets, fine.n_facets + facets], axis=1)


@dataclass(eq=False)
class LevelTransfer:
    """Prolongation ``P = (id - P_T) I_avg`` and its building blocks."""

    I_avg: sp.csr_matrix
    T_dofs: np.ndarray
    P: sp.csr_matrix

    def prolong(self, u):
        return self.P @ u

    def restrict(self, r):
        return self.P.T @ r


def harmonic_correction(I_avg, A_fine, T):
    """Replace the T rows of ``I_avg`` by ``-A_TT^-1 A_TN I_N``.

    ``T`` is ``(nblocks, b)``; ``A_TT`` must be block diagonal in it.
    """
    nb, b = T.shape
    Tf = T.ravel()
    n = A_fine.shape[0]
    isT = np.zeros(n, dtype=bool)
    isT[Tf] = True
    keepN = sp.diags((~isT).astype(float))
    I_N = (keepN @ I_avg).tocsr()
    Att = A_fine[Tf][:, Tf].tocoo()
    blk = np.zeros((nb, b, b))
    same = (Att.row // b) == (Att.col // b)
    if not np.all(np.abs(Att.data[~same]) <= 1e-14 * np.abs(Att.data).max()):
        raise ValueError("interior block is not block diagonal")
    blk[Att.row[same] // b, Att.row[same] % b, Att.col[same] % b] = Att.data[same]
    inv = np.linalg.inv(blk)
    Inv = sp.bsr_matrix((inv, np.arange(nb), np.arange(nb + 1)), shape=(nb * b, nb * b)).tocsr()
    PT = -(Inv @ (A_fine[Tf] @ I_N)).tocsr()
    E = sp.csr_matrix((np.ones(len(Tf)), (Tf, np.arange(len(Tf)))), shape=(n, len(Tf)))
    return (I_N + E @ PT).tocsr()


def build_level_transfer(coarse, fine, refinement, A_fine=None, harmonic=True):
    I = build_averaging(coarse, fine, refinement)
    T = interior_dofs(fine, refinement)
    if harmonic:
        if A_fine is None:
            raise ValueError("harmonic correction needs the fine operator")
        P = harmonic_correction(I, A_fine, T)
    else:
        P = I
    return LevelTransfer(I, T, P)


def p_inclusion(mesh, k):
    """``Pi_0^k``: lowest-order compound DOFs into order-k DOFs (injection)."""
    nF = mesh.n_facets
    kk = k + 1
    F = np.arange(nF)
    rows = np.concatenate([F * kk, nF * kk + F * kk])
    cols = np.concatenate([F, nF + F])
    return sp.csr_matrix((np.ones(2 * nF), (rows, cols)), shape=(2 * nF * kk, 2 * nF))


def facet_gram(mesh, k):
    """Facet-block-diagonal Gram matrix of the global DOFs.

    Uses ``sum_F h_F int_F u.v ds`` with the Legendre facet basis; normal
    and tangential parts are orthogonal, so the matrix is diagonal.
    """
    kk = k + 1
    h = mesh.facet_lengths
    w = (h[:, None] ** 2) / (2 * np.arange(kk)[None, :] + 1)  # h_F * |F| int P_i^2 / 2
    d = np.concatenate([w.ravel(), w.ravel()])
    return sp.diags(d)


def p_projection(mesh, k):
    """``Pi_k^0 = G_0^-1 (Pi_0^k)^T G_k``; selection for the hierarchical basis."""
    G0 = facet_gram(mesh, 0)
    Gk = facet_gram(mesh, k)
    Pi = p_inclusion(mesh, k)
    return (sp.diags(1.0 / G0.diagonal()) @ Pi.T @ Gk).tocsr()


def cr_embedding(mesh, k):
    """Lowest-order DOFs into order-k DOFs through Crouzeix-Raviart traces.

    The compound vector is read as a CR field (midpoint values
    ``c_n n_F + c_t t_F``) whose linear facet traces are L2-projected onto
    the order-k facet space, averaging the two sides of interior facets.
    The ``P_0`` rows coincide with :func:`p_inclusion`; the ``P_1`` rows add
    the trace slope; higher rows are zero.
    """
    inc = p_inclusion(mesh, k).tocoo()
    if k == 0:
        return inc.tocsr()
    nF, kk = mesh.n_facets, k + 1
    n, t = mesh.facet_normals, mesh.facet_tangents
    E, Ef = mesh.elements, mesh.element_facets
    e = np.arange(len(E))
    w_side = np.where(mesh.facet_elements[:, 1] >= 0, 0.5, 1.0)
    rows, cols, vals = [inc.row], [inc.col], [inc.data]
    for j in range(3):
        F = Ef[:, j]
        a, b = mesh.facets[F, 0], mesh.facets[F, 1]
        # along F the CR trace slope is v(F_b) - v(F_a), where F_a is the
        # other facet through a and F_b the other facet through b
        Fa = Ef[e, np.argmax(E == b[:, None], axis=1)]
        Fb = Ef[e, np.argmax(E == a[:, None], axis=1)]
        w = w_side[F]
        for roff, d in ((0, n[F]), (nF * kk, t[F])):
            r = roff + F * kk + 1
            for G, sgn in ((Fb, 1.0), (Fa, -1.0)):
                for coff, dG in ((0, n[G]), (nF, t[G])):
                    rows.append(r)
                    cols.append(coff + G)
                    vals.append(sgn * w * np.einsum("ec,ec->e", d, dG))
    out = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                        shape=(2 * nF * kk, 2 * nF))
    out.sum_duplicates()
    return out
