"""h-multigrid on the lowest-order hierarchy and the hp-multigrid wrapper.

Level 0 is the coarsest mesh and is solved directly.  A V-cycle uses one
coarse call per level with the variable schedule ``m(l-1) = 2 m(l)``; a
W-cycle uses two coarse calls (the second warm-started from the first) with
a constant number of smoothing steps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fespace import is_boundary_dof_mask
from .hdg import HDGSolution, assemble_condensed
from .smoothers import smoother_for
from .transfer import build_level_transfer, cr_embedding, p_inclusion
from .uzawa import constrain_inplace

GAMMA = 2  # ratio of smoothing steps between consecutive levels (V-cycle)


@dataclass(eq=False)
class MGLevel:
    mesh: object
    A: sp.csr_matrix
    fixed: np.ndarray
    smoother: object = None
    transfer: object = None  # from level l-1 to l


@dataclass(eq=False)
class MGHierarchy:
    """Lowest-order multigrid preconditioner.

    Parameters
    ----------
    levels : list of MGLevel, coarsest first
    cycle : ``"v"`` (variable V) or ``"w"``
    m : smoothing steps on the finest level
    """

    levels: list
    cycle: str = "v"
    m: int = 1
    coarse_lu: object = None
    trace: list = None
    _free0: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.cycle not in ("v", "w"):
            raise ValueError(f"unknown cycle {self.cycle!r}")
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if self.coarse_lu is None:
            lv = self.levels[0]
            self.coarse_lu = spla.splu(sp.csc_matrix(lv.A))

    @property
    def n_levels(self):
        return len(self.levels)

    def steps(self, level):
        top = self.n_levels - 1
        if self.cycle == "w":
            return self.m
        return self.m * GAMMA ** (top - level)

    def apply(self, g, u0=None, level=None):
        """One cycle on ``level`` (finest by default) for ``A u = g``."""
        level = self.n_levels - 1 if level is None else level
        u = np.zeros_like(g) if u0 is None else np.array(u0, dtype=float)
        return self._cycle(level, g, u)

    def __call__(self, r):
        return self.apply(r)

    def _cycle(self, l, g, u):
        lv = self.levels[l]
        if l == 0:
            return self.coarse_lu.solve(g)
        m = self.steps(l)
        if self.trace is not None:
            self.trace.append((l, "pre", float(np.linalg.norm(g - lv.A @ u))))
        lv.smoother.smooth(g, u, m, "forward")
        r = g - lv.A @ u
        rc = lv.transfer.restrict(r)
        e = np.zeros_like(rc)
        for _ in range(2 if self.cycle == "w" else 1):
            e = self._cycle(l - 1, rc, e)
        u += lv.transfer.prolong(e)
        lv.smoother.smooth(g, u, m, "backward")
        if self.trace is not None:
            self.trace.append((l, "post", float(np.linalg.norm(g - lv.A @ u))))
        return u


def transfer_wind(sol, fine, coarse, refinement):
    """RT0 wind on the coarse mesh from facet fluxes of the children."""
    k = sol.k
    kk = k + 1
    c0 = sol.u[: fine.n_facets * kk: kk]
    cls_skel = refinement.facet_class != 0
    f = np.flatnonzero(cls_skel)
    F = refinement.facet_parent[f]
    orient = np.einsum("fc,fc->f", fine.facet_normals[f], coarse.facet_normals[F])
    flux = np.zeros(coarse.n_facets)
    np.add.at(flux, F, orient * c0[f] * fine.facet_lengths[f])
    out = HDGSolution.zeros(coarse, 0)
    out.u[: coarse.n_facets] = flux / coarse.facet_lengths
    return out


def lowest_order_wind(sol, mesh):
    """Keep the mean normal flux of an order-k wind (k = 0 view)."""
    kk = sol.k + 1
    out = HDGSolution.zeros(mesh, 0)
    out.u[: mesh.n_facets] = sol.u[: mesh.n_facets * kk: kk]
    return out


def build_mg(hierarchy, form0, cycle="v", m=1, smoother="gs", harmonic=True,
             top_operator=None, wind=None):
    """Assemble and set up every level of the lowest-order hierarchy.

    Parameters
    ----------
    hierarchy : MeshHierarchy
    form0 : HDGForm on the finest mesh with ``k = 0`` (template for all
        levels; its penalty, ``nu``, ``beta`` and ``mass_shift`` are reused)
    top_operator : optional constrained matrix used on the finest level
        instead of rediscretising (``k = 0`` Newton case)
    wind : optional order-k wind on the finest mesh; coarser winds are
        obtained by facet-flux transfer and used in Oseen form
    """
    meshes = hierarchy.levels
    J = len(meshes) - 1
    winds = [None] * (J + 1)
    if wind is not None:
        winds[J] = lowest_order_wind(wind, meshes[J])
        for l in range(J, 0, -1):
            winds[l - 1] = transfer_wind(winds[l], meshes[l], meshes[l - 1],
                                         hierarchy.refinements[l - 1])
    levels = []
    for l, mesh in enumerate(meshes):
        if l == J and top_operator is not None:
            A = top_operator
            fixed = is_boundary_dof_mask(mesh, 0)
        else:
            form = form0.with_(mesh=mesh, k=0, f=None, bc=None, wind=winds[l], newton=False,
                               mass_ref=None, _space=None)
            cs = assemble_condensed(form)
            A = constrain_inplace(cs.A, cs.fixed)
            fixed = cs.fixed
        lv = MGLevel(mesh, A, fixed)
        if l > 0:
            lv.smoother = smoother_for(A, mesh, 0, fixed, mode=smoother)
            lv.transfer = build_level_transfer(meshes[l - 1], mesh, hierarchy.refinements[l - 1],
                                               A, harmonic=harmonic)
        levels.append(lv)
    return MGHierarchy(levels, cycle, m)


@dataclass(eq=False)
class HPPreconditioner:
    """Relax on order k, correct in the lowest-order space, relax again.

    ``embed`` maps lowest-order DOFs into order-k DOFs; the residual is
    restricted with its transpose.
    """

    A: sp.csr_matrix
    mg: MGHierarchy
    k: int
    m: int = 1
    smoother: object = None
    embed: sp.csr_matrix = None

    def apply(self, g, u0=None):
        if self.k == 0:
            return self.mg.apply(g, u0)
        u = np.zeros_like(g) if u0 is None else np.array(u0, dtype=float)
        self.smoother.smooth(g, u, self.m, "forward")
        r = g - self.A @ u
        u += self.embed @ self.mg.apply(self.embed.T @ r)
        self.smoother.smooth(g, u, self.m, "backward")
        return u

    def __call__(self, r):
        return self.apply(r)


def build_hp(A_k, mesh, k, fixed, mg, m=1, smoother="gs", embedding="inclusion"):
    """hp preconditioner for the order-k operator ``A_k``.

    ``embedding`` is ``"inclusion"`` (lowest-order DOFs injected) or
    ``"cr"`` (Crouzeix-Raviart trace projection, see :func:`cr_embedding`).
    """
    if k == 0:
        return HPPreconditioner(A_k, mg, 0, m)
    if embedding == "inclusion":
        P = p_inclusion(mesh, k)
    elif embedding == "cr":
        P = cr_embedding(mesh, k)
    else:
        raise ValueError(f"unknown embedding {embedding!r}")
    P = (sp.diags((~fixed).astype(float)) @ P).tocsr()
    P.eliminate_zeros()
    sm = smoother_for(A_k, mesh, k, fixed, mode=smoother)
    return HPPreconditioner(A_k, mg, k, m, sm, P)


def contraction_factor(mg, n_iter=12, seed=0):
    """Energy-norm contraction of the cycle used as a stationary iteration.

    Iterates ``u <- u + B(-A u)`` on ``A u = 0`` from a random start and
    returns the geometric mean of the last few error reductions.
    """
    lv = mg.levels[-1]
    A = lv.A
    rng = np.random.default_rng(seed)
    u = rng.standard_normal(A.shape[0])
    u[lv.fixed] = 0.0
    norms = [float(np.sqrt(u @ (A @ u)))]
    for _ in range(n_iter):
        u = mg.apply(np.zeros_like(u), u)
        norms.append(float(np.sqrt(max(u @ (A @ u), 0.0))))
        if norms[-1] == 0.0 or not np.isfinite(norms[-1]):
            break
    ratios = np.array(norms[1:]) / np.array(norms[:-1])
    tail = ratios[len(ratios) // 2:]
    return float(np.exp(np.mean(np.log(np.maximum(tail, 1e-300)))))
