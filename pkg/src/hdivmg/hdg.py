"""Element assembly, static condensation and local recovery for H(div)-HDG.

Unknowns per element ``K`` are ordered ``(L, u_o, p_o | u_n, u_t)``: the
flux tensor ``L`` in tensor DG P^k, interior RT functions, zero-mean
pressure modes, then the facet-attached normal and tangential velocity
DOFs.  The element system (Stokes part) is

    [-nu^-1 M_L   -B        0    ] [L  ]   [0]
    [-B^T          K_uu    -D_o^T] [u  ] = [f]
    [ 0           -D_o      0    ] [p_o]   [0]

with ``B(L, v) = (grad v, L) - <tng(v - v_hat), L n>``.  The facet-attached
part is kept, the rest is eliminated element by element.  The piecewise
constant pressure ``p_c`` couples only through ``B_c v = -(div v, 1)_K``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from . import _kernels
from .fespace import (
    build_rt_space,
    dim_p,
    facet_dirichlet_moments,
    facet_quadrature,
    is_boundary_dof_mask,
    legendre_table,
    quadrature,
    ref_facet_points,
    ref_scalar_tables,
)

CHUNK_ENTRIES = 4_000_000  # float64 entries of element matrices per chunk


@dataclass(eq=False)
class HDGSolution:
    """Full discrete state on one mesh.

    Attributes
    ----------
    u : (2 n_facets (k+1),) global facet DOFs, ``[normal | tangential]``
    u_o : (nE, n_interior) interior RT coefficients
    L : (nE, 4 dim P^k) tensor flux, index ``(2r + c) dim P^k + a``
    p_o : (nE, dim P^k - 1) zero-mean pressure modes
    p_c : (nE,) piecewise-constant pressure
    """

    k: int
    u: np.ndarray
    u_o: np.ndarray
    L: np.ndarray
    p_o: np.ndarray
    p_c: np.ndarray

    @classmethod
    def zeros(cls, mesh, k):
        nP = dim_p(k)
        nE = mesh.n_elements
        return cls(k, np.zeros(2 * mesh.n_facets * (k + 1)), np.zeros((nE, k * (k + 1))),
                   np.zeros((nE, 4 * nP)), np.zeros((nE, nP - 1)), np.zeros(nE))

    def copy(self):
        return HDGSolution(self.k, self.u.copy(), self.u_o.copy(), self.L.copy(),
                           self.p_o.copy(), self.p_c.copy())

    def __add__(self, other):
        return HDGSolution(self.k, self.u + other.u, self.u_o + other.u_o, self.L + other.L,
                           self.p_o + other.p_o, self.p_c + other.p_c)


@dataclass(eq=False)
class HDGForm:
    """Everything that defines one linear(ised) element system.

    Parameters
    ----------
    mesh, k, nu, beta
    f : callable ``f(x, y) -> (2, n)`` or None
    bc : callable ``g(x, y) -> (2, n)`` for Dirichlet data, or None for zero
    penalty : grad-div coefficient added to the condensed matrix
    wind : HDGSolution or None; convection ``C(wind; u, v)``
    newton : add ``C(u; wind, v)`` and use the nonlinear residual at
        ``wind`` as right-hand side (increment form)
    mass_shift : extra ``mass_shift * (u, v)``
    mass_ref : HDGSolution whose ``mass_shift * (u_ref, v)`` goes to the load
    """

    mesh: object
    k: int
    nu: float
    beta: float = 0.0
    f: object = None
    bc: object = None
    penalty: float = 0.0
    wind: object = None
    newton: bool = False
    mass_shift: float = 0.0
    mass_ref: object = None
    _space: object = field(default=None, repr=False)

    def __post_init__(self):
        if self.nu <= 0:
            raise ValueError("nu must be positive")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if self.newton and self.wind is None:
            raise ValueError("newton linearisation needs a wind state")
        if self._space is None:
            self._space = build_rt_space(self.mesh, self.k)

    @property
    def space(self):
        return self._space

    def with_(self, **kw):
        return replace(self, **kw)


@dataclass(eq=False)
class CondensedSystem:
    """Condensed operator on global velocity DOFs.

    Attributes
    ----------
    A : csr_matrix, includes the grad-div penalty of the form
    B : csr_matrix (nE, n), ``B v = -(div v, 1)_K``
    F : condensed load (or condensed Newton residual)
    u_D : Dirichlet lift (zero for Newton increments)
    fixed : boolean mask of constrained DOFs
    """

    form: HDGForm
    A: sp.csr_matrix
    B: sp.csr_matrix
    F: np.ndarray
    u_D: np.ndarray
    fixed: np.ndarray

    @property
    def areas(self):
        return self.form.mesh.areas

    @property
    def penalty(self):
        return self.form.penalty

    def grad_div(self):
        return grad_div_from_b(self.B, self.areas)


# --- sparsity ---------------------------------------------------------------

class FacetPattern:
    """CSR pattern of facet-coupled global DOFs in ``[normal | tangential]``.

    Two facets couple when they share an element.  Within a row the columns
    are ordered ``(component, neighbour facet, i)`` so that the position of
    any element entry can be computed without searching.
    """

    def __init__(self, mesh, k):
        kk = k + 1
        nF, nE = mesh.n_facets, mesh.n_elements
        ef = mesh.element_facets
        f1 = np.repeat(ef, 3, axis=1).ravel()
        f2 = np.tile(ef, (1, 3)).ravel()
        key = f1 * nF + f2
        ukey, inv = np.unique(key, return_inverse=True)
        u1 = ukey // nF
        u2 = ukey % nF
        cnt = np.bincount(u1, minlength=nF)
        nptr = np.concatenate([[0], np.cumsum(cnt)])
        rank = np.arange(len(ukey)) - nptr[u1]
        self.rank = rank[inv].reshape(nE, 3, 3)
        self.nbr_count = cnt
        n = 2 * nF * kk
        row_f = np.tile(np.repeat(np.arange(nF), kk), 2)
        row_len = 2 * cnt[row_f] * kk
        indptr = np.concatenate([[0], np.cumsum(row_len)]).astype(np.int64)
        # columns shared by all rows of facet F: component, neighbour, i
        cols_c = np.stack([c * nF * kk + u2[:, None] * kk + np.arange(kk)[None, :]
                           for c in range(2)])  # (2, npairs, kk)
        seg = 2 * cnt * kk
        fptr = np.concatenate([[0], np.cumsum(seg)])
        fidx = np.repeat(np.arange(nF), seg)
        within = np.arange(fptr[-1]) - fptr[fidx]
        comp = within // (cnt[fidx] * kk)
        rem = within % (cnt[fidx] * kk)
        flat = cols_c[comp, nptr[fidx] + rem // kk, rem % kk]
        offs = np.arange(indptr[-1]) - np.repeat(indptr[:-1], row_len)
        self.indices = flat[np.repeat(fptr[row_f], row_len) + offs].astype(np.int32)
        self.indptr = indptr
        self.n = n
        self.k = k
        self.mesh = mesh

    def positions(self, elems):
        """Data positions ``(ne, 6kk, 6kk)`` for local ``[normal | tang]`` order."""
        kk = self.k + 1
        mesh = self.mesh
        nF = mesh.n_facets
        ef = mesh.element_facets[elems]  # (ne, 3)
        ne = len(elems)
        comp = np.repeat([0, 1], 3 * kk)
        j = np.tile(np.repeat([0, 1, 2], kk), 2)
        i = np.tile(np.arange(kk), 6)
        F = ef[:, j]  # (ne, 6kk)
        row = comp[None, :] * nF * kk + F * kk + i[None, :]
        cnt = self.nbr_count[F]  # (ne, 6kk)
        rk = self.rank[elems][:, j[:, None], j[None, :]]  # (ne, 6kk, 6kk)
        pos = (self.indptr[row][:, :, None]
               + comp[None, None, :] * (cnt[:, :, None] * kk)
               + rk * kk + i[None, None, :])
        return pos.reshape(ne, 6 * kk, 6 * kk)

    def matrix(self, data):
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(self.n, self.n))


_PATTERN_CACHE = {}


def facet_pattern(mesh, k):
    key = (id(mesh), k)
    hit = _PATTERN_CACHE.get(key)
    if hit is not None and hit.mesh is mesh:
        return hit
    if len(_PATTERN_CACHE) > 16:
        _PATTERN_CACHE.clear()
    pat = FacetPattern(mesh, k)
    _PATTERN_CACHE[key] = pat
    return pat


# --- global pieces ----------------------------------------------------------

def divergence_matrix(mesh, k):
    """``B[K, (F, 0)] = -sign |F|``: minus the facet flux of each element."""
    kk = k + 1
    nE = mesh.n_elements
    rows = np.repeat(np.arange(nE), 3)
    cols = (mesh.element_facets * kk).ravel()
    vals = -(mesh.element_signs * mesh.facet_lengths[mesh.element_facets]).ravel()
    return sp.csr_matrix((vals, (rows, cols)), shape=(nE, 2 * mesh.n_facets * kk))


def grad_div_from_b(B, areas):
    return (B.T @ sp.diags(1.0 / areas) @ B).tocsr()


def assemble_grad_div(mesh, k):
    """``(div u, div v)`` on the global velocity DOFs."""
    return grad_div_from_b(divergence_matrix(mesh, k), mesh.areas)


def dirichlet_lift(mesh, k, bc):
    """Global vector holding the Legendre facet moments of ``bc``."""
    kk = k + 1
    nFk = mesh.n_facets * kk
    u = np.zeros(2 * nFk)
    if bc is None:
        return u
    d = mesh.dirichlet_facets
    if len(d) == 0:
        return u
    cn, ct = facet_dirichlet_moments(mesh, k, bc, d)
    idx = (d[:, None] * kk + np.arange(kk)).ravel()
    u[idx] = cn.ravel()
    u[nFk + idx] = ct.ravel()
    return u


# --- element kernels --------------------------------------------------------

def _sizes(form):
    k = form.k
    kk = k + 1
    nP = dim_p(k)
    n_o = form.space.n_interior
    nL = 4 * nP
    nb = n_o + 3 * kk
    nu = nb + 3 * kk
    nPo = nP - 1
    return dict(kk=kk, nP=nP, n_o=n_o, nL=nL, nb=nb, nu=nu, nPo=nPo,
                n=nL + nu + nPo, oU=nL, oP=nL + nu)


def _local_coeffs(form, sol, elems):
    """RT coefficients ``[u_o | normal (j, i)]`` of ``sol`` on ``elems``."""
    edofs = form.space.element_dofs()[elems]
    return np.concatenate([sol.u_o[elems], sol.u[edofs]], axis=1)


def _full_local(form, sol, elems, s):
    """Full local vector ``[L, u_o, u_n, u_t, p_o]`` of ``sol``."""
    edofs = form.space.element_dofs()[elems]
    nFk = form.mesh.n_facets * s["kk"]
    return np.concatenate([sol.L[elems], sol.u_o[elems], sol.u[edofs],
                           sol.u[nFk + edofs], sol.p_o[elems]], axis=1)


def element_systems(form, elems):
    """Element matrices and right-hand sides for ``elems``.

    Returns
    -------
    A : (ne, n, n) element matrix (Jacobian in Newton mode)
    rhs : (ne, n) load, or the nonlinear residual in Newton mode
    bflux : (ne, 3(k+1)) entries of ``B_c`` on the element normal DOFs
    """
    mesh, k = form.mesh, form.k
    s = _sizes(form)
    kk, nP, n_o, nL, nb, nu = s["kk"], s["nP"], s["n_o"], s["nL"], s["nb"], s["nu"]
    oU, oP, n = s["oU"], s["oP"], s["n"]
    ne = len(elems)
    space = form.space
    qorder = 3 * k + 4

    qr = quadrature(qorder)
    x, y = qr.xy.T
    val, grad, div = space.evaluate(elems, x, y)
    J = mesh.jacobians[elems]
    det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    wd = qr.weights[None, :] * det[:, None]
    phi, _ = ref_scalar_tables(k, x, y)

    A = np.zeros((ne, n, n))
    rhs = np.zeros((ne, n))
    A[:, np.arange(nL), np.arange(nL)] = -(det / form.nu)[:, None]

    Bm = np.zeros((ne, nL, nu))
    Bm[:, :, :nb] = np.einsum("eq,aq,ebrcq->ercab", wd, phi, grad, optimize=True).reshape(ne, nL, nb)
    Mu = np.einsum("eq,ebrq,edrq->ebd", wd, val, val, optimize=True)
    Do = np.einsum("eq,aq,ebq->eab", wd, phi[1:], div, optimize=True)
    Kuu = np.zeros((ne, nu, nu))
    Kuu[:, :nb, :nb] = (form.beta + form.mass_shift) * Mu

    if form.f is not None:
        X = mesh.vertices[mesh.elements[elems, 0]][:, None, :] + np.einsum("erc,qc->eqr", J, qr.xy, optimize=True)
        fv = np.asarray(form.f(X[..., 0].ravel(), X[..., 1].ravel())).reshape(2, ne, -1)
        rhs[:, oU:oU + nb] = np.einsum("eq,req,ebrq->eb", wd, fv, val, optimize=True)
    if form.mass_ref is not None and form.mass_shift:
        cref = _local_coeffs(form, form.mass_ref, elems)
        rhs[:, oU:oU + nb] += form.mass_shift * np.einsum("ebd,ed->eb", Mu, cref, optimize=True)

    wind = form.wind
    N = None
    if wind is not None:
        wc = _local_coeffs(form, wind, elems)
        wvol = np.einsum("eb,ebcq->ecq", wc, val, optimize=True)
        Kuu[:, :nb, :nb] -= np.einsum("eq,eurq,ecq,evrcq->evu", wd, val, wvol, grad, optimize=True)
        if form.newton:
            N = np.zeros((ne, nu, nu))
            N[:, :nb, :nb] -= np.einsum("eq,edcq,erq,evrcq->evd", wd, val, wvol, grad, optimize=True)

    tq, wt = facet_quadrature(qorder)
    leg = legendre_table(k, 2 * tq - 1)  # (kk, nt)
    nFk = mesh.n_facets * kk
    for j in range(3):
        p = ref_facet_points(j, tq)
        fval, _, _ = space.evaluate(elems, p[:, 0], p[:, 1])
        phif, _ = ref_scalar_tables(k, p[:, 0], p[:, 1])
        F = mesh.element_facets[elems, j]
        sg = mesh.element_signs[elems, j]
        nrm = mesh.facet_normals[F] * sg[:, None]
        tF = mesh.facet_tangents[F]
        ds = mesh.facet_lengths[F][:, None] * wt[None, :]
        that = (sg[:, None] ** np.arange(kk)[None, :])[:, :, None] * leg[None]  # (ne, kk, nt)
        vhat = that[:, :, None, :] * tF[:, None, :, None]  # (ne, kk, 2, nt)
        vn = np.einsum("ebcq,ec->ebq", fval, nrm, optimize=True)
        tv = fval - vn[:, :, None, :] * nrm[:, None, :, None]
        Z = np.zeros((ne, nu, 2, len(tq)))
        Z[:, :nb] = tv
        sl = slice(nb + j * kk, nb + (j + 1) * kk)
        Z[:, sl] = -vhat
        Bm -= np.einsum("eq,ebrq,ec,aq->ercab", ds, Z, nrm, phif, optimize=True).reshape(ne, nL, nu)
        if wind is not None:
            wval = np.einsum("eb,ebcq->ecq", wc, fval, optimize=True)
            wn = np.einsum("ecq,ec->eq", wval, nrm, optimize=True)
            theta = 0.5 * (1.0 + np.sign(wn))
            U = np.zeros_like(Z)
            U[:, :nb] = theta[:, None, None, :] * tv
            U[:, sl] = (1.0 - theta)[:, None, None, :] * vhat
            Kuu += np.einsum("eq,evrq,eurq->evu", ds * wn, Z, U, optimize=True)
            if form.newton:
                tw = wval - wn[:, None, :] * nrm[:, :, None]
                ct = wind.u[nFk + F[:, None] * kk + np.arange(kk)[None, :]]  # (ne, kk)
                what = np.einsum("ei,eiq,ec->ecq", ct, that, tF, optimize=True)
                up = theta[:, None, :] * tw + (1.0 - theta)[:, None, :] * what
                N[:, :, :nb] += np.einsum("eq,evrq,erq,edq->evd", ds, Z, up, vn, optimize=True)

    A[:, :nL, oU:oP] = -Bm
    A[:, oU:oP, :nL] = -Bm.transpose(0, 2, 1)
    A[:, oU:oP, oU:oP] = Kuu
    A[:, oP:, oU:oU + nb] = -Do
    A[:, oU:oU + nb, oP:] = -Do.transpose(0, 2, 1)

    flen = mesh.facet_lengths[mesh.element_facets[elems]]
    bflux = np.zeros((ne, 3, kk))
    bflux[:, :, 0] = -mesh.element_signs[elems] * flen
    bflux = bflux.reshape(ne, 3 * kk)

    if form.newton:
        X = _full_local(form, wind, elems, s)
        rhs = rhs - np.einsum("eab,eb->ea", A, X, optimize=True)
        rhs[:, oU + n_o:oU + n_o + 3 * kk] -= bflux * wind.p_c[elems][:, None]
        A[:, oU:oP, oU:oP] += N
    return A, rhs, bflux


def _split_indices(s):
    lidx = np.concatenate([np.arange(s["nL"]), np.arange(s["oU"], s["oU"] + s["n_o"]),
                           np.arange(s["oP"], s["n"])])
    gidx = np.arange(s["oU"] + s["n_o"], s["oP"])
    return lidx, gidx


def _chunks(form):
    s = _sizes(form)
    size = max(1, CHUNK_ENTRIES // (s["n"] * s["n"] * 3))
    nE = form.mesh.n_elements
    for a in range(0, nE, size):
        yield np.arange(a, min(nE, a + size))


def assemble_condensed(form):
    """Condense the element systems onto the facet-attached DOFs.

    Returns
    -------
    CondensedSystem
    """
    mesh, k = form.mesh, form.k
    s = _sizes(form)
    kk = s["kk"]
    pat = facet_pattern(mesh, k)
    data = np.zeros(len(pat.indices))
    F = np.zeros(pat.n)
    lidx, gidx = _split_indices(s)
    ng = len(gidx)
    edofs_all = form.space.element_dofs()
    nFk = mesh.n_facets * kk
    areas = mesh.areas
    for elems in _chunks(form):
        A, rhs, bflux = element_systems(form, elems)
        All = A[:, lidx[:, None], lidx[None, :]]
        Alg = A[:, lidx[:, None], gidx[None, :]]
        Agl = A[:, gidx[:, None], lidx[None, :]]
        Agg = A[:, gidx[:, None], gidx[None, :]]
        Xs = np.linalg.solve(All, np.concatenate([Alg, rhs[:, lidx, None]], axis=2))
        S = Agg - Agl @ Xs[:, :, :ng]
        r = rhs[:, gidx] - np.einsum("egl,el->eg", Agl, Xs[:, :, ng], optimize=True)
        if form.penalty:
            S[:, :3 * kk, :3 * kk] += form.penalty * (
                bflux[:, :, None] * bflux[:, None, :] / areas[elems][:, None, None])
        pos = pat.positions(elems)
        _kernels.scatter_add(data, pos.ravel(), S.ravel())
        ed = edofs_all[elems]
        gd = np.concatenate([ed, nFk + ed], axis=1)
        np.add.at(F, gd.ravel(), r.ravel())
    Amat = pat.matrix(data)
    B = divergence_matrix(mesh, k)
    fixed = is_boundary_dof_mask(mesh, k)
    u_D = np.zeros(pat.n) if form.newton else dirichlet_lift(mesh, k, form.bc)
    return CondensedSystem(form, Amat, B, F, u_D, fixed)


def recover_local(form, u_glob, p_c=None):
    """Element-by-element recovery of ``(L, u_o, p_o)``.

    ``u_glob`` is the full global vector (Dirichlet values included).  In
    Newton mode the inputs and outputs are increments.
    """
    mesh, k = form.mesh, form.k
    s = _sizes(form)
    kk = s["kk"]
    lidx, gidx = _split_indices(s)
    nE = mesh.n_elements
    sol = HDGSolution.zeros(mesh, k)
    sol.u = np.array(u_glob, dtype=float)
    if p_c is not None:
        sol.p_c = np.array(p_c, dtype=float)
    edofs_all = form.space.element_dofs()
    nFk = mesh.n_facets * kk
    nL, n_o = s["nL"], s["n_o"]
    for elems in _chunks(form):
        A, rhs, _ = element_systems(form, elems)
        ed = edofs_all[elems]
        xg = np.concatenate([u_glob[ed], u_glob[nFk + ed]], axis=1)
        All = A[:, lidx[:, None], lidx[None, :]]
        Alg = A[:, lidx[:, None], gidx[None, :]]
        b = rhs[:, lidx] - np.einsum("elg,eg->el", Alg, xg, optimize=True)
        xl = np.linalg.solve(All, b[:, :, None])[:, :, 0]
        sol.L[elems] = xl[:, :nL]
        sol.u_o[elems] = xl[:, nL:nL + n_o]
        sol.p_o[elems] = xl[:, nL + n_o:]
    assert sol.L.shape[0] == nE
    return sol


def full_residual(form, sol):
    """Residual of the uncondensed element equations, assembled globally.

    Returns ``(r_local, r_global)``: per-element residual of the
    ``(L, u_o, p_o)`` rows and the assembled residual on the global DOFs
    (including the ``p_c`` coupling).  Used by tests.
    """
    mesh, k = form.mesh, form.k
    s = _sizes(form)
    kk = s["kk"]
    lidx, gidx = _split_indices(s)
    edofs_all = form.space.element_dofs()
    nFk = mesh.n_facets * kk
    rl = np.zeros((mesh.n_elements, len(lidx)))
    rg = np.zeros(2 * nFk)
    n_o = s["n_o"]
    for elems in _chunks(form):
        A, rhs, bflux = element_systems(form, elems)
        X = _full_local(form, sol, elems, s)
        r = rhs - np.einsum("eab,eb->ea", A, X, optimize=True)
        r[:, s["oU"] + n_o:s["oU"] + n_o + 3 * kk] -= bflux * sol.p_c[elems][:, None]
        rl[elems] = r[:, lidx]
        ed = edofs_all[elems]
        gd = np.concatenate([ed, nFk + ed], axis=1)
        np.add.at(rg, gd.ravel(), r[:, gidx].ravel())
    return rl, rg
