"""Velocity post-processing and L2 error measurement."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fespace import build_rt_space, dim_p, quadrature, ref_scalar_tables

CHUNK = 8192


def _phys_points(mesh, elems, xy):
    J = mesh.jacobians[elems]
    X = mesh.vertices[mesh.elements[elems, 0]][:, None, :] + np.einsum("erc,qc->eqr", J, xy)
    det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    return X, J, det


def _velocity_values(space, sol, elems, x, y, with_div=False):
    val, _, div = space.evaluate(elems, x, y)
    coef = np.concatenate([sol.u_o[elems], sol.u[space.element_dofs()[elems]]], axis=1)
    u = np.einsum("eb,ebcq->ecq", coef, val)
    if with_div:
        return u, np.einsum("eb,ebq->eq", coef, div)
    return u


def postprocess_velocity(mesh, k, sol, nu):
    """Elementwise P^{k+1} reconstruction ``u*``.

    Solves ``(grad u*, grad v)_K = (-nu^-1 L_h, grad v)_K`` for the
    zero-mean part of P^{k+1} and matches the element mean of ``u_h``.

    Returns
    -------
    (nE, 2, dim P^{k+1}) coefficients in the orthonormal scalar basis.
    """
    space = build_rt_space(mesh, k)
    q = quadrature(2 * k + 4)
    x, y = q.xy.T
    nP = dim_p(k)
    nS = dim_p(k + 1)
    phiL, _ = ref_scalar_tables(k, x, y)
    phiS, gS = ref_scalar_tables(k + 1, x, y)
    out = np.zeros((mesh.n_elements, 2, nS))
    for a in range(0, mesh.n_elements, CHUNK):
        elems = np.arange(a, min(mesh.n_elements, a + CHUNK))
        _, J, det = _phys_points(mesh, elems, q.xy)
        Jinv = np.linalg.inv(J)
        g = np.einsum("bdq,edc->ebcq", gS, Jinv)  # physical gradients
        wd = q.weights[None, :] * det[:, None]
        K = np.einsum("eq,ebcq,edcq->ebd", wd, g[:, 1:], g[:, 1:])
        Lh = np.einsum("erca,aq->ercq", sol.L[elems].reshape(-1, 2, 2, nP), phiL)
        rhs = -np.einsum("eq,ercq,ebcq->erb", wd, Lh, g[:, 1:]) / nu
        out[elems, :, 1:] = np.linalg.solve(K[:, None], rhs[..., None])[..., 0]
        uh = _velocity_values(space, sol, elems, x, y)
        out[elems, :, 0] = np.einsum("eq,ecq->ec", wd, uh) * phiS[0, 0] / det[:, None]
    return out


@dataclass
class ErrorReport:
    k: int
    nu: float
    beta: float
    level: int
    e_u: float
    e_L: float
    e_ustar: float
    div_u: float
    e_p: float = float("nan")
    eoc: dict = field(default_factory=dict)


def measure_errors(mesh, k, sol, exact, nu, beta=0.0, level=-1, ustar=None):
    """L2 errors of ``u_h``, ``L_h``, ``u*``, ``p_h`` and ``||div u_h||``."""
    space = build_rt_space(mesh, k)
    q = quadrature(2 * k + 6)
    x, y = q.xy.T
    nP = dim_p(k)
    phiL, _ = ref_scalar_tables(k, x, y)
    phiS, _ = ref_scalar_tables(k + 1, x, y)
    if ustar is None:
        ustar = postprocess_velocity(mesh, k, sol, nu)
    acc = np.zeros(5)
    for a in range(0, mesh.n_elements, CHUNK):
        elems = np.arange(a, min(mesh.n_elements, a + CHUNK))
        X, _, det = _phys_points(mesh, elems, q.xy)
        wd = q.weights[None, :] * det[:, None]
        px, py = X[..., 0].ravel(), X[..., 1].ravel()
        ne = len(elems)
        ue = exact.u(px, py).reshape(2, ne, -1).transpose(1, 0, 2)
        Le = exact.L(px, py).reshape(2, 2, ne, -1).transpose(2, 0, 1, 3)
        pe = exact.p(px, py).reshape(ne, -1)
        uh, dv = _velocity_values(space, sol, elems, x, y, with_div=True)
        Lh = np.einsum("erca,aq->ercq", sol.L[elems].reshape(-1, 2, 2, nP), phiL)
        ph = sol.p_c[elems][:, None] + np.einsum("ea,aq->eq", sol.p_o[elems], phiL[1:])
        us = np.einsum("eca,aq->ecq", ustar[elems], phiS)
        acc[0] += np.sum(wd * ((ue - uh) ** 2).sum(1))
        acc[1] += np.sum(wd * ((Le - Lh) ** 2).sum((1, 2)))
        acc[2] += np.sum(wd * ((ue - us) ** 2).sum(1))
        acc[3] += np.sum(wd * dv ** 2)
        acc[4] += np.sum(wd * (pe - ph) ** 2)
    e = np.sqrt(acc)
    return ErrorReport(k, nu, beta, level, e[0], e[1], e[2], e[3], e[4])


def eoc(errors):
    """``log2(e_coarse / e_fine)`` between consecutive entries."""
    e = np.asarray(errors, dtype=float)
    return np.log2(e[:-1] / e[1:])


def eoc_last_usable(errors, floor=1e-8):
    """EOC between the two finest levels whose errors are above ``floor``."""
    e = np.asarray(errors, dtype=float)
    idx = np.flatnonzero(e > floor)
    if len(idx) < 2:
        return float("nan")
    i = idx[-1]
    if idx[-2] != i - 1:
        return float("nan")
    return float(np.log2(e[i - 1] / e[i]))
