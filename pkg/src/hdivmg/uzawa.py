"""Augmented-Lagrangian Uzawa iteration on the condensed system.

For the saddle problem ``A x + B^T p = F``, ``B (x + offset) = 0`` each
outer step solves

    (A + s B^T M^-1 B) x = F_base - B^T p - s B^T M^-1 B offset,
    p <- p + s M^-1 B (x + offset),

with ``M = diag(|K|)`` and ``s = 1/eps``.  Since ``M^-1 B u`` is minus the
element mean of ``div u`` the update reads ``p_K <- p_K - s (div u)_K``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg  # noqa: F401

PENALTY_RATIO = 1e6  # (nu eps)^-1


def penalty_for(nu, ratio=PENALTY_RATIO):
    """Grad-div coefficient ``1/eps`` with ``(nu eps)^-1 = ratio``."""
    return ratio * nu


def constrain_inplace(A, fixed):
    """Zero constrained rows and columns of a CSR matrix, unit diagonal."""
    n = A.shape[0]
    rows = np.repeat(np.arange(n, dtype=np.int32), np.diff(A.indptr))
    mask = fixed[rows] | fixed[A.indices]
    A.data[mask] = 0.0
    diag = mask & (rows == A.indices)
    A.data[diag] = 1.0
    del rows, mask, diag
    return A


@dataclass
class UzawaResult:
    u: np.ndarray
    p_c: np.ndarray
    inner_iterations: list = field(default_factory=list)
    div_history: list = field(default_factory=list)
    p_history: list = field(default_factory=list)
    status: str = "ok"

    @property
    def avg_inner(self):
        return float(np.mean(self.inner_iterations)) if self.inner_iterations else 0.0


class UzawaProblem:
    """Condensed system prepared for the Uzawa loop.

    Computes the lifted right-hand side, then constrains ``A`` in place
    (the caller's matrix is reused to save memory unless ``copy=True``).
    """

    def __init__(self, system, offset=None, copy=False):
        self.system = system
        self.sigma = system.penalty
        if self.sigma <= 0:
            raise ValueError("Uzawa needs a positive grad-div penalty")
        self.B = system.B
        self.areas = system.areas
        self.fixed = system.fixed
        self.u_D = system.u_D
        A = system.A.copy() if copy else system.A
        uD = system.u_D
        if np.any(uD):
            BuD = self.B @ uD
            Fb = system.F - A @ uD + self.sigma * (self.B.T @ (BuD / self.areas))
        else:
            Fb = system.F.copy()
        self.F_base = Fb
        self.offset = uD if offset is None else offset
        self.A = constrain_inplace(A, self.fixed)
        if copy is False:
            system.A = self.A
        mesh = system.form.mesh
        self.project_mean = not mesh.has_outflow

    def rhs(self, p):
        r = self.F_base - self.B.T @ p - self.sigma * (
            self.B.T @ ((self.B @ self.offset) / self.areas))
        r[self.fixed] = 0.0
        return r

    def update(self, x, p):
        p = p + self.sigma * (self.B @ (x + self.offset)) / self.areas
        if self.project_mean:
            p = p - np.dot(self.areas, p) / self.areas.sum()
        return p

    def div_norm(self, u):
        """``||div u||_0`` of the facet part (elementwise constant)."""
        d = (self.B @ u) / self.areas
        return float(np.sqrt(np.dot(self.areas, d * d)))


def uzawa_solve(problem, inner, n_outer=2, p0=None, x0=None, p_exact=None, warm_start=False):
    """Run ``n_outer`` Uzawa steps.

    Parameters
    ----------
    problem : UzawaProblem
    inner : callable ``(rhs, x0) -> (x, iterations)``
    p0 : initial pressure (zeros by default)
    x0 : initial guess for the first inner solve
    warm_start : start later inner solves from the previous iterate
        instead of zero
    p_exact : optional reference pressure; errors are stored in ``p_history``

    Returns
    -------
    UzawaResult with ``u = x + u_D`` (full global vector).
    """
    nE = len(problem.areas)
    p = np.zeros(nE) if p0 is None else np.array(p0, dtype=float)
    x = None if x0 is None else np.array(x0, dtype=float)
    res = UzawaResult(None, None)
    for n in range(n_outer):
        rhs = problem.rhs(p)
        if n and not warm_start:
            x = None
        x, its = inner(rhs, x)
        res.inner_iterations.append(its)
        p = problem.update(x, p)
        res.div_history.append(problem.div_norm(x + problem.offset))
        if p_exact is not None:
            d = p - p_exact
            res.p_history.append(float(np.sqrt(np.dot(problem.areas, d * d))))
    res.u = x + problem.u_D
    res.p_c = p
    return res


def direct_inner(A):
    """Sparse LU inner solver for small problems and tests."""
    lu = sp.linalg.splu(sp.csc_matrix(A))

    def solve(rhs, x0):
        return lu.solve(rhs), 1

    return solve
