"""Pressure-robust Crouzeix-Raviart discretisation and CR/RT0 interpolations.

Everything here is built from explicit lowest-order formulas, independently
of the hierarchical RT_k machinery, so it can serve as an oracle for the
condensed ``k = 0`` HDG operator.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fespace import build_cr_space, quadrature


def _grad_lambda(mesh):
    """Gradients of the barycentric coordinates, ``(nE, 3, 2)``."""
    v = mesh.vertices[mesh.elements]
    area2 = 2.0 * mesh.areas
    g = np.empty((mesh.n_elements, 3, 2))
    for j in range(3):
        a, b = v[:, (j + 1) % 3], v[:, (j + 2) % 3]
        # inward normal to the opposite edge, scaled by |edge| / 2|K|
        g[:, j, 0] = (a[:, 1] - b[:, 1]) / area2
        g[:, j, 1] = (b[:, 0] - a[:, 0]) / area2
    return g


def build_interp_rt(mesh):
    """CR vector DOFs ``2F + c`` -> RT0 fluxes: ``c_F = v(m_F) . n_F``."""
    nF = mesh.n_facets
    n = mesh.facet_normals
    rows = np.repeat(np.arange(nF), 2)
    cols = np.stack([2 * np.arange(nF), 2 * np.arange(nF) + 1], axis=1).ravel()
    return sp.csr_matrix((n.ravel(), (rows, cols)), shape=(nF, 2 * nF))


def build_interp_cr(mesh):
    """Compound lowest-order ``[flux | tangential]`` -> CR vector DOFs.

    The midpoint value on facet ``F`` is ``c_F n_F + c_hat_F t_F``.
    """
    nF = mesh.n_facets
    n, t = mesh.facet_normals, mesh.facet_tangents
    F = np.arange(nF)
    rows = np.concatenate([2 * F, 2 * F + 1, 2 * F, 2 * F + 1])
    cols = np.concatenate([F, F, nF + F, nF + F])
    vals = np.concatenate([n[:, 0], n[:, 1], t[:, 0], t[:, 1]])
    return sp.csr_matrix((vals, (rows, cols)), shape=(2 * nF, 2 * nF))


def rt0_local_values(mesh, bary):
    """Global RT0 basis on each element at barycentric points.

    Returns ``(nE, 3, 2, nq)``; local function ``j`` belongs to facet ``j``
    and equals ``sign |F_j| / (2|K|) (x - x_j)``.
    """
    v = mesh.vertices[mesh.elements]
    x = np.einsum("ekc,qk->eqc", v, bary)
    scale = mesh.element_signs * mesh.facet_lengths[mesh.element_facets] / (2 * mesh.areas[:, None])
    vals = x[:, None, :, :] - v[:, :, None, :]  # (nE, 3, nq, 2)
    return (scale[:, :, None, None] * vals).transpose(0, 1, 3, 2)


def rt0_mass(mesh):
    q = quadrature(2)
    val = rt0_local_values(mesh, q.points)
    w = 2 * mesh.areas[:, None] * q.weights[None, :]
    loc = np.einsum("eq,eicq,ejcq->eij", w, val, val)
    ef = mesh.element_facets
    rows = np.repeat(ef, 3, axis=1).ravel()
    cols = np.tile(ef, (1, 3)).ravel()
    nF = mesh.n_facets
    return sp.csr_matrix((loc.ravel(), (rows, cols)), shape=(nF, nF))


def rt0_divergence(mesh):
    """``B0[K, F] = -(div phi_F, 1)_K = -sign |F|``."""
    nE, nF = mesh.n_elements, mesh.n_facets
    rows = np.repeat(np.arange(nE), 3)
    vals = -(mesh.element_signs * mesh.facet_lengths[mesh.element_facets]).ravel()
    return sp.csr_matrix((vals, (rows, mesh.element_facets.ravel())), shape=(nE, nF))


def cr_laplacian(mesh):
    """Broken ``(grad u, grad v)`` for vector CR, DOF ``2F + c``."""
    g = -2.0 * _grad_lambda(mesh)  # gradients of 1 - 2 lambda_j
    loc = mesh.areas[:, None, None] * np.einsum("eic,ejc->eij", g, g)
    ef = mesh.element_facets
    nF = mesh.n_facets
    rows, cols, vals = [], [], []
    for c in range(2):
        rows.append(np.repeat(2 * ef + c, 3, axis=1).ravel())
        cols.append(np.tile(2 * ef + c, (1, 3)).ravel())
        vals.append(loc.ravel())
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(2 * nF, 2 * nF))


def assemble_cr_pressure_robust(mesh, nu, beta, sigma, f=None):
    """Pressure-robust CR system with grad-div term.

    Returns
    -------
    A_cr : csr ``nu (grad u, grad v) + beta (P u, P v) + sigma (div u, div v)``
        on all CR DOFs, ``P`` the RT0 interpolation
    B_cr : csr ``-(div u, q)`` onto piecewise constants
    F_cr : ``(f, P v)``
    """
    P = build_interp_rt(mesh)
    B0 = rt0_divergence(mesh)
    A = nu * cr_laplacian(mesh) + beta * (P.T @ rt0_mass(mesh) @ P)
    A = A + sigma * (P.T @ B0.T @ sp.diags(1.0 / mesh.areas) @ B0 @ P)
    B_cr = (B0 @ P).tocsr()
    F = np.zeros(2 * mesh.n_facets)
    if f is not None:
        q = quadrature(6)
        val = rt0_local_values(mesh, q.points)
        v = mesh.vertices[mesh.elements]
        x = np.einsum("ekc,qk->eqc", v, q.points)
        fv = np.asarray(f(x[..., 0].ravel(), x[..., 1].ravel())).reshape(2, mesh.n_elements, -1)
        w = 2 * mesh.areas[:, None] * q.weights[None, :]
        loc = np.einsum("eq,ceq,eicq->ei", w, fv, val)
        F0 = np.zeros(mesh.n_facets)
        np.add.at(F0, mesh.element_facets.ravel(), loc.ravel())
        F = P.T @ F0
    return A.tocsr(), B_cr, F


def cr_free_mask(mesh):
    return ~build_cr_space(mesh).fixed


def congruence_gap(mesh, nu, beta, sigma):
    """Relative Frobenius gap between ``A_0`` and ``Pi^T A_cr Pi`` on free DOFs."""
    from .hdg import HDGForm, assemble_condensed

    sysm = assemble_condensed(HDGForm(mesh, 0, nu, beta, penalty=sigma))
    free = ~sysm.fixed
    A0 = sysm.A[free][:, free]
    Acr, _, _ = assemble_cr_pressure_robust(mesh, nu, beta, sigma)
    Pi = build_interp_cr(mesh)
    C = (Pi.T @ Acr @ Pi)[free][:, free]
    return float(spla.norm(A0 - C) / spla.norm(A0))
