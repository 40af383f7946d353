"""Quadrature, reference bases and DOF layouts.

The reference triangle has vertices ``(0,0), (1,0), (0,1)`` with barycentric
coordinates ``l0 = 1-x-y, l1 = x, l2 = y``.  Bivariate polynomials are held
as dense coefficient arrays ``c[i, j]`` of ``x**i * y**j``.

RT_k layout (hierarchical)
--------------------------
Per facet ``F`` there are ``k+1`` global functions.  Index 0 is the Whitney
flux function, indices ``i >= 1`` are divergence-free facet bubbles; the
normal trace of function ``(F, i)`` on ``F`` is ``P_i(s)`` (Legendre, ``s``
running from -1 at the lower to +1 at the higher vertex index) measured
against the global facet normal.  Per element there are ``k(k+1)`` interior
functions with vanishing normal trace; the first ``n_div_free`` of them are
divergence free.

Global velocity vector at order ``k`` is ``[normal | tangential]`` with
``(F, i) -> F*(k+1) + i`` inside each block.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial import legendre as npleg
from scipy.special import roots_jacobi, roots_legendre

from .mesh import FacetTag

MAX_ORDER = 3
_PDEG = 8  # coefficient arrays hold total degree <= _PDEG

REF_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
REF_FACET_LENGTHS = np.array([np.sqrt(2.0), 1.0, 1.0])


def _check_order(k):
    if not (0 <= int(k) <= MAX_ORDER) or int(k) != k:
        raise ValueError(f"order k must be an integer in 0..{MAX_ORDER}, got {k}")


# --- quadrature -------------------------------------------------------------

@dataclass(frozen=True)
class QuadratureRule:
    """Rule on the reference triangle.

    Attributes
    ----------
    points : (nq, 3) barycentric coordinates
    weights : (nq,) reference-area weights summing to 1/2
    order : polynomial degree integrated exactly
    """

    points: np.ndarray
    weights: np.ndarray
    order: int

    @property
    def xy(self):
        return self.points[:, 1:]


@lru_cache(maxsize=None)
def quadrature(order):
    """Collapsed Gauss-Jacobi rule exact up to total degree ``order``."""
    if not 0 <= order <= 20:
        raise ValueError(f"unsupported quadrature order {order}")
    n = max(1, (order + 2) // 2)
    a, wa = roots_jacobi(n, 1.0, 0.0)
    b, wb = roots_legendre(n)
    A, B = np.meshgrid(a, b, indexing="ij")
    y = 0.5 * (1 + A)
    x = 0.5 * (1 - y) * (1 + B)
    w = np.outer(wa, wb) / 8.0
    x, y, w = x.ravel(), y.ravel(), w.ravel()
    pts = np.stack([1 - x - y, x, y], axis=1)
    return QuadratureRule(pts, w, order)


@lru_cache(maxsize=None)
def facet_quadrature(order):
    """Gauss-Legendre on ``t in [0, 1]``; weights sum to 1."""
    n = max(1, (order + 2) // 2)
    s, w = roots_legendre(n)
    return 0.5 * (s + 1), 0.5 * w


# --- bivariate polynomials --------------------------------------------------

def _poly(const=0.0):
    c = np.zeros((_PDEG + 1, _PDEG + 1))
    c[0, 0] = const
    return c


def _pmul(a, b):
    out = _poly()
    ia = np.argwhere(a != 0)
    for i, j in ia:
        ib = np.argwhere(b != 0)
        for p, q in ib:
            if i + p + j + q > _PDEG:
                raise OverflowError("polynomial degree overflow")
            out[i + p, j + q] += a[i, j] * b[p, q]
    return out


def _pdx(c):
    out = np.zeros_like(c)
    out[..., :-1, :] = c[..., 1:, :] * np.arange(1, _PDEG + 1)[:, None]
    return out


def _pdy(c):
    out = np.zeros_like(c)
    out[..., :, :-1] = c[..., :, 1:] * np.arange(1, _PDEG + 1)[None, :]
    return out


def _ppow(c, n):
    out = _poly(1.0)
    for _ in range(n):
        out = _pmul(out, c)
    return out


def _monomials(x, y):
    """(nq, D+1, D+1) table of x**i y**j."""
    e = np.arange(_PDEG + 1)
    return (x[:, None] ** e)[:, :, None] * (y[:, None] ** e)[:, None, :]


def peval(c, x, y):
    """Evaluate polynomial arrays ``c[..., D+1, D+1]`` at points ``(x, y)``.

    Returns an array of shape ``c.shape[:-2] + (len(x),)``.
    """
    mon = _monomials(np.atleast_1d(x), np.atleast_1d(y))
    return np.einsum("...ij,qij->...q", c, mon)


_LAM = [_poly(1.0), _poly(), _poly()]
_LAM[0][1, 0] = -1.0
_LAM[0][0, 1] = -1.0
_LAM[1][1, 0] = 1.0
_LAM[2][0, 1] = 1.0
_CURL_LAM = [np.array([-1.0, 1.0]), np.array([0.0, -1.0]), np.array([1.0, 0.0])]


def _curl(c):
    return np.stack([_pdy(c), -_pdx(c)])


def integrated_legendre(n):
    """Coefficients (power basis in x) of ``int_{-1}^x P_{n-1}``, ``n >= 1``."""
    cl = np.zeros(n)
    cl[-1] = 1.0
    integ = npleg.legint(cl, lbnd=-1)
    return npleg.leg2poly(integ)


def _scaled_integrated_legendre(n, s, t):
    """``t**n * L_n(s/t)`` as a bivariate polynomial in (x, y)."""
    coef = integrated_legendre(n)
    out = _poly()
    for m, cm in enumerate(coef):
        if abs(cm) > 1e-15:
            out += cm * _pmul(_ppow(s, m), _ppow(t, n - m))
    return out


def _ref_integrate(c):
    """Exact integral of polynomial arrays over the reference triangle."""
    from math import factorial
    i = np.arange(_PDEG + 1)
    fi = np.array([factorial(int(v)) for v in i], dtype=float)
    tab = fi[:, None] * fi[None, :] / np.array(
        [[factorial(int(a + b + 2)) for b in i] for a in i], dtype=float)
    return np.einsum("...ij,ij->...", c, tab)


# --- reference bases --------------------------------------------------------

@lru_cache(maxsize=None)
def scalar_basis(k):
    """L2(reference)-orthonormal basis of P^k, ordered by degree.

    Function 0 is the constant ``sqrt(2)``; functions ``1..`` have zero mean.
    """
    mons = []
    for d in range(k + 1):
        for j in range(d + 1):
            c = _poly()
            c[d - j, j] = 1.0
            mons.append(c)
    mons = np.array(mons)
    gram = _ref_integrate(np.array([[_pmul(a, b) for b in mons] for a in mons]))
    # Gram-Schmidt through Cholesky keeps the degree ordering
    Lc = np.linalg.cholesky(gram)
    T = np.linalg.inv(Lc)
    basis = np.einsum("ab,bij->aij", T, mons)
    if basis[0, 0, 0] < 0:
        basis[0] = -basis[0]
    return basis


def rt_monomial_basis(k):
    """Power-basis spanning set of RT_k on the reference triangle."""
    out = []
    for d in range(k + 1):
        for j in range(d + 1):
            c = _poly()
            c[d - j, j] = 1.0
            out.append(np.stack([c, _poly()]))
            out.append(np.stack([_poly(), c]))
    x = _LAM[1]
    y = _LAM[2]
    for j in range(k + 1):
        c = _poly()
        c[k - j, j] = 1.0
        out.append(np.stack([_pmul(x, c), _pmul(y, c)]))
    return np.array(out)


def ref_facet_points(j, t):
    a, b = REF_VERTICES[(j + 1) % 3], REF_VERTICES[(j + 2) % 3]
    return a[None, :] + t[:, None] * (b - a)[None, :]


def _ref_outward_normals():
    out = []
    for j in range(3):
        a, b = REF_VERTICES[(j + 1) % 3], REF_VERTICES[(j + 2) % 3]
        t = (b - a) / np.linalg.norm(b - a)
        out.append(np.array([t[1], -t[0]]))
    return np.array(out)


REF_NORMALS = _ref_outward_normals()


@dataclass(frozen=True)
class ReferenceRT:
    """Reference RT_k basis as polynomial arrays.

    Attributes
    ----------
    facet : (3, k+1, 2, D+1, D+1)
        ``facet[j, i]`` has outward normal trace ``P_i(s_local)`` on local
        facet ``j`` (``s_local`` from -1 at vertex ``j+1`` to +1 at ``j+2``)
        and zero normal trace elsewhere.
    interior : (k(k+1), 2, D+1, D+1), reference-L2 orthonormal
    n_div_free : number of leading divergence-free interior functions
    """

    k: int
    facet: np.ndarray
    interior: np.ndarray
    n_div_free: int


@lru_cache(maxsize=None)
def reference_rt(k):
    _check_order(k)
    facet = np.zeros((3, k + 1, 2, _PDEG + 1, _PDEG + 1))
    for j in range(3):
        a, b = (j + 1) % 3, (j + 2) % 3
        lf = REF_FACET_LENGTHS[j]
        facet[j, 0] = lf * (_LAM[a][None] * _CURL_LAM[b][:, None, None]
                            - _LAM[b][None] * _CURL_LAM[a][:, None, None])
        s = _LAM[b] - _LAM[a]
        t = _LAM[a] + _LAM[b]
        for i in range(1, k + 1):
            psi = _scaled_integrated_legendre(i + 1, s, t)
            facet[j, i] = 0.5 * lf * _curl(psi)

    # interior: RT_k functions with vanishing normal moments on all facets
    mono = rt_monomial_basis(k)
    tq, wq = facet_quadrature(2 * k + 2)
    rows = []
    for j in range(3):
        p = ref_facet_points(j, tq)
        vals = peval(mono, p[:, 0], p[:, 1])  # (nm, 2, nq)
        vn = np.einsum("mcq,c->mq", vals, REF_NORMALS[j])
        leg = np.array([npleg.legval(2 * tq - 1, np.eye(k + 1)[i]) for i in range(k + 1)])
        rows.append(np.einsum("iq,mq,q->im", leg, vn, wq))
    C = np.vstack(rows)
    _, sv, Vt = np.linalg.svd(C)
    rank = int(np.sum(sv > 1e-10 * sv[0]))
    null = Vt[rank:]
    interior = np.einsum("nm,mcij->ncij", null, mono)
    n_int = k * (k + 1)
    assert len(interior) == n_int
    n_df = 0
    if n_int:
        div = _pdx(interior[:, 0]) + _pdy(interior[:, 1])
        D = div.reshape(n_int, -1)
        U, sd, Wt = np.linalg.svd(D.T, full_matrices=True)
        rank_d = int(np.sum(sd > 1e-10 * max(sd.max(), 1.0)))
        # right singular vectors: leading ones carry divergence, tail is kernel
        Q = Wt[::-1]
        n_df = n_int - rank_d
        interior = np.einsum("nm,mcij->ncij", Q, interior)
        gram = _gram_vec(interior)
        # orthonormalise within each group, keeping the split
        blocks = [slice(0, n_df), slice(n_df, n_int)]
        for sl in blocks:
            g = gram[sl, sl]
            if g.size:
                Lc = np.linalg.cholesky(g)
                interior[sl] = np.einsum("ab,bcij->acij", np.linalg.inv(Lc), interior[sl])
    return ReferenceRT(k, facet, interior, n_df)


def _gram_vec(funcs):
    n = len(funcs)
    g = np.empty((n, n))
    for a in range(n):
        for b in range(a, n):
            v = _ref_integrate(_pmul(funcs[a, 0], funcs[b, 0]) + _pmul(funcs[a, 1], funcs[b, 1]))
            g[a, b] = g[b, a] = v
    return g


# --- per-element evaluation --------------------------------------------------

@dataclass(frozen=True)
class RefTables:
    """Reference basis values at a point set (x, y)."""

    val: np.ndarray   # (nb, 2, nq)
    grad: np.ndarray  # (nb, 2, 2, nq): d v_r / d x_c
    div: np.ndarray   # (nb, nq)


def _tables(funcs, x, y):
    val = peval(funcs, x, y)
    dx = peval(_pdx(funcs), x, y)
    dy = peval(_pdy(funcs), x, y)
    grad = np.stack([dx, dy], axis=2)
    return RefTables(val, grad, dx[:, 0] + dy[:, 1])


def ref_rt_tables(k, x, y):
    """Reference tables for ``[interior | facet (j, i)]`` ordering."""
    ref = reference_rt(k)
    funcs = np.concatenate([ref.interior, ref.facet.reshape(-1, *ref.facet.shape[2:])])
    return _tables(funcs, x, y)


def ref_scalar_tables(k, x, y):
    """Values ``(nb, nq)`` and reference gradients ``(nb, 2, nq)``."""
    b = scalar_basis(k)
    val = peval(b, x, y)
    g = np.stack([peval(_pdx(b), x, y), peval(_pdy(b), x, y)], axis=1)
    return val, g


def dim_p(k, d=2):
    return (k + 1) * (k + 2) // 2


# --- spaces -----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RTSpace:
    """Hierarchical RT_k on a mesh.

    Attributes
    ----------
    mesh, k
    n_facet_dofs : ``n_facets * (k+1)`` global (facet-attached) DOFs
    n_interior : interior functions per element
    n_div_free : divergence-free interior functions per element
    fixed : boolean mask of Dirichlet normal-trace DOFs
    """

    mesh: object
    k: int
    n_facet_dofs: int
    n_interior: int
    n_div_free: int
    fixed: np.ndarray

    def element_dofs(self):
        """(nE, 3(k+1)) global facet DOF numbers in local ``(j, i)`` order."""
        kk = self.k + 1
        ef = self.mesh.element_facets
        return (ef[:, :, None] * kk + np.arange(kk)[None, None, :]).reshape(len(ef), -1)

    def element_coeff_signs(self, elems=slice(None)):
        """(nE, 3(k+1)) factors ``sign**(i+1)``."""
        s = self.mesh.element_signs[elems][:, :, None]
        p = np.arange(self.k + 1)[None, None, :] + 1
        return (s ** p).reshape(len(s), 3 * (self.k + 1))

    def evaluate(self, elems, x, y):
        """Physical basis on elements at reference points ``(x, y)``.

        Returns values ``(ne, nb, 2, nq)``, gradients ``(ne, nb, 2, 2, nq)``
        and divergences ``(ne, nb, nq)`` for local ordering
        ``[interior | facet (j, i)]``, already including global signs and
        facet-length scaling so that facet functions are the global ones.
        """
        mesh = self.mesh
        J = mesh.jacobians[elems]
        det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        Jinv = np.linalg.inv(J)
        tab = ref_rt_tables(self.k, x, y)
        scale = np.ones((len(elems), tab.val.shape[0]))
        nfl = 3 * (self.k + 1)
        flen = mesh.facet_lengths[mesh.element_facets[elems]]  # (ne, 3)
        sc = np.repeat(flen / REF_FACET_LENGTHS[None, :], self.k + 1, axis=1)
        scale[:, self.n_interior:] = sc * self.element_coeff_signs(elems)
        scale /= det[:, None]
        val = np.einsum("erc,bcq->ebrq", J, tab.val, optimize=True) * scale[:, :, None, None]
        grad = np.einsum("erc,bcdq,eds->ebrsq", J, tab.grad, Jinv, optimize=True) * scale[:, :, None, None, None]
        div = tab.div[None] * scale[:, :, None]
        assert val.shape[1] == self.n_interior + nfl
        return val, grad, div


def build_rt_space(mesh, k):
    _check_order(k)
    ref = reference_rt(k)
    fixed = np.zeros(mesh.n_facets * (k + 1), dtype=bool)
    dir_f = mesh.dirichlet_facets
    fixed[(dir_f[:, None] * (k + 1) + np.arange(k + 1)).ravel()] = True
    return RTSpace(mesh, k, mesh.n_facets * (k + 1), k * (k + 1), ref.n_div_free, fixed)


@dataclass(frozen=True, eq=False)
class FacetTangentialSpace:
    """``t_F * P_i(s)`` per facet, ``i = 0..k``."""

    mesh: object
    k: int
    n_dofs: int
    fixed: np.ndarray


def build_facet_tangential_space(mesh, k):
    _check_order(k)
    fixed = np.zeros(mesh.n_facets * (k + 1), dtype=bool)
    dir_f = mesh.dirichlet_facets
    fixed[(dir_f[:, None] * (k + 1) + np.arange(k + 1)).ravel()] = True
    return FacetTangentialSpace(mesh, k, mesh.n_facets * (k + 1), fixed)


@dataclass(frozen=True, eq=False)
class CRSpace:
    """Vector CR space; DOF ``2*F + c`` is component ``c`` at midpoint of ``F``."""

    mesh: object
    n_dofs: int
    fixed: np.ndarray

    @staticmethod
    def local_basis(bary):
        """Values of the 3 local CR functions ``1 - 2 l_j`` at barycentric points."""
        return 1.0 - 2.0 * np.asarray(bary)


def build_cr_space(mesh):
    fixed = np.zeros(2 * mesh.n_facets, dtype=bool)
    d = mesh.dirichlet_facets
    fixed[2 * d] = True
    fixed[2 * d + 1] = True
    return CRSpace(mesh, 2 * mesh.n_facets, fixed)


@dataclass(frozen=True, eq=False)
class DGSpace:
    """Elementwise P^k with the reference-orthonormal basis.

    Function 0 is the constant, functions ``1..`` span the zero-mean part.
    """

    mesh: object
    k: int
    n_local: int
    zero_mean: bool = False

    @property
    def n_dofs(self):
        return self.mesh.n_elements * self.n_local


def build_dg_space(mesh, k, zero_mean=False):
    return DGSpace(mesh, k, dim_p(k), zero_mean)


def legendre_table(k, s):
    """``P_i(s)`` for ``i = 0..k`` as a ``(k+1, len(s))`` array."""
    return np.array([npleg.legval(s, np.eye(k + 1)[i]) for i in range(k + 1)])


def facet_dirichlet_moments(mesh, k, g, facets=None, order=None):
    """Normal and tangential Legendre coefficients of data ``g`` on facets.

    Returns ``(cn, ct)`` each ``(nf, k+1)`` such that ``g.n ~ sum cn_i P_i``
    and ``g.t ~ sum ct_i P_i`` in the facet L2 sense.
    """
    if facets is None:
        facets = np.arange(mesh.n_facets)
    order = order or 2 * k + 6
    t, w = facet_quadrature(order)
    a = mesh.vertices[mesh.facets[facets, 0]]
    b = mesh.vertices[mesh.facets[facets, 1]]
    pts = a[:, None, :] + t[None, :, None] * (b - a)[:, None, :]
    vals = np.asarray(g(pts[..., 0].ravel(), pts[..., 1].ravel())).reshape(2, len(facets), -1)
    n = mesh.facet_normals[facets]
    tg = mesh.facet_tangents[facets]
    gn = vals[0] * n[:, 0:1] + vals[1] * n[:, 1:2]
    gt = vals[0] * tg[:, 0:1] + vals[1] * tg[:, 1:2]
    leg = legendre_table(k, 2 * t - 1)
    norm = (2 * np.arange(k + 1) + 1)[None, :]  # 1 / int_0^1 P_i^2 dt
    cn = np.einsum("fq,iq,q->fi", gn, leg, w) * norm
    ct = np.einsum("fq,iq,q->fi", gt, leg, w) * norm
    return cn, ct


def is_boundary_dof_mask(mesh, k):
    """Combined fixed mask on ``[normal | tangential]``."""
    m = np.zeros(mesh.n_facets * (k + 1), dtype=bool)
    d = np.flatnonzero(mesh.boundary_tags == FacetTag.DIRICHLET)
    m[(d[:, None] * (k + 1) + np.arange(k + 1)).ravel()] = True
    return np.concatenate([m, m])
