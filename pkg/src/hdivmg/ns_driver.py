"""Solver drivers: generalized Stokes and Picard/Newton Navier-Stokes.

Every linear(ised) system is solved by two augmented-Lagrangian Uzawa steps
whose inner problems use PCG (Stokes) or GMRes (Navier-Stokes) with the
hp-multigrid preconditioner.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .fespace import build_rt_space, is_boundary_dof_mask, quadrature
from .hdg import (HDGForm, HDGSolution, assemble_condensed, dirichlet_lift,
                  divergence_matrix, full_residual, recover_local)
from .krylov import KrylovConfig, KrylovError, gmres, pcg
from .multigrid import build_hp, build_mg
from .uzawa import PENALTY_RATIO, UzawaProblem, direct_inner, penalty_for, uzawa_solve

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverConfig:
    """Linear solver settings shared by the drivers.

    ``m`` is used both for the order-k relaxation and for the h-multigrid
    smoothing on the finest level.
    """

    cycle: str = "v"
    m: int = 1
    smoother: str = "gs"
    harmonic: bool = True
    n_outer: int = 2
    penalty_ratio: float = PENALTY_RATIO
    krylov: KrylovConfig = KrylovConfig()
    mg_trace: bool = False
    direct: bool = False  # sparse LU inner solves (reference runs)
    embedding: str = "cr"
    warm_start: bool = False  # between Uzawa steps


@dataclass
class LinearSolveReport:
    status: str = "ok"
    inner_iterations: list = field(default_factory=list)
    div_u: float = float("nan")
    setup_time: float = 0.0
    solve_time: float = 0.0
    message: str = ""
    mg_trace: list = None

    @property
    def avg_inner(self):
        return float(np.mean(self.inner_iterations)) if self.inner_iterations else float("nan")


def _inner_solver(A, M, cfg, method):
    solver = pcg if method == "cg" else gmres
    kcfg = KrylovConfig(cfg.krylov.rel_tol, cfg.krylov.abs_tol, cfg.krylov.max_iter, method)

    def inner(rhs, x0):
        res = solver(A, M, rhs, x0, kcfg)
        return res.x, res.iterations
    return inner


def solve_linear(hierarchy, form, cfg, method="cg", x0=None, p0=None, offset=None,
                 top_is_exact=False, recover=True):
    """Assemble, precondition and run the Uzawa loop for one form.

    Returns
    -------
    (HDGSolution or None, UzawaResult or None, LinearSolveReport)
    """
    report = LinearSolveReport()
    t0 = time.perf_counter()
    mesh = form.mesh
    cs = assemble_condensed(form)
    prob = UzawaProblem(cs, offset=offset)
    if cfg.direct:
        inner = direct_inner(prob.A)
    else:
        form0 = form.with_(k=0, _space=None)
        top = prob.A if (form.k == 0 and top_is_exact) else None
        mg = build_mg(hierarchy, form0, cfg.cycle, cfg.m, cfg.smoother, cfg.harmonic,
                      top_operator=top, wind=form.wind)
        if cfg.mg_trace:
            mg.trace = []
            report.mg_trace = mg.trace
        hp = build_hp(prob.A, mesh, form.k, prob.fixed, mg, cfg.m, cfg.smoother,
                      cfg.embedding)
        inner = _inner_solver(prob.A, hp, cfg, method)
    report.setup_time = time.perf_counter() - t0
    t1 = time.perf_counter()
    try:
        res = uzawa_solve(prob, inner, cfg.n_outer, p0=p0, x0=x0, warm_start=cfg.warm_start)
    except KrylovError as exc:
        report.status = "NA"
        report.message = str(exc)
        report.inner_iterations.append(getattr(exc, "iterations", -1))
        report.solve_time = time.perf_counter() - t1
        return None, None, report
    report.inner_iterations = list(res.inner_iterations)
    report.div_u = res.div_history[-1]
    report.solve_time = time.perf_counter() - t1
    sol = recover_local(form, res.u, res.p_c) if recover else None
    return sol, res, report


def solve_stokes(hierarchy, k, nu, beta=0.0, f=None, bc=None, cfg=SolverConfig(),
                 recover=True):
    """Generalized Stokes on the finest mesh of ``hierarchy``."""
    form = HDGForm(hierarchy.finest, k, nu, beta, f=f, bc=bc,
                   penalty=penalty_for(nu, cfg.penalty_ratio))
    return solve_linear(hierarchy, form, cfg, "cg", recover=recover)


@dataclass(frozen=True)
class NonlinearConfig:
    picard_tol: float = 1e-4
    newton_rel_tol: float = 1e-8
    newton_abs_tol: float = 1e-10
    max_picard: int = 50
    max_newton: int = 20
    pseudo_time_rate: float = 0.0
    warm_start: bool = True

    def __post_init__(self):
        if min(self.picard_tol, self.newton_rel_tol, self.newton_abs_tol) <= 0:
            raise ValueError("tolerances must be positive")
        if self.pseudo_time_rate < 0:
            raise ValueError("pseudo_time_rate must be >= 0")


@dataclass
class NSReport:
    status: str = "ok"
    picard_iterations: list = field(default_factory=list)   # inner counts per step
    newton_iterations: list = field(default_factory=list)
    picard_updates: list = field(default_factory=list)
    newton_updates: list = field(default_factory=list)
    newton_residuals: list = field(default_factory=list)
    stokes_iterations: list = field(default_factory=list)
    div_u: list = field(default_factory=list)
    picard_converged: bool = True
    message: str = ""

    @property
    def avg_picard(self):
        its = [x for s in self.picard_iterations for x in s]
        return float(np.mean(its)) if its else float("nan")

    @property
    def avg_newton(self):
        its = [x for s in self.newton_iterations for x in s]
        return float(np.mean(its)) if its else float("nan")


def velocity_l2(mesh, k, sol):
    """``||u_h||_0`` of the RT part of ``sol``."""
    space = build_rt_space(mesh, k)
    q = quadrature(2 * k + 2)
    x, y = q.xy.T
    total = 0.0
    chunk = 8192
    edofs = space.element_dofs()
    det = 2 * mesh.areas
    for a in range(0, mesh.n_elements, chunk):
        e = np.arange(a, min(a + chunk, mesh.n_elements))
        val, _, _ = space.evaluate(e, x, y)
        c = np.concatenate([sol.u_o[e], sol.u[edofs[e]]], axis=1)
        u = np.einsum("eb,ebcq->ecq", c, val)
        total += float(np.sum(q.weights[None, :] * det[e][:, None] * (u ** 2).sum(1)))
    return np.sqrt(total)


def solve_navier_stokes(hierarchy, k, nu, beta=0.0, f=None, bc=None, cfg=SolverConfig(),
                        ncfg=NonlinearConfig()):
    """Stokes start, Picard phase, then Newton phase.

    Returns
    -------
    (HDGSolution, NSReport)
    """
    mesh = hierarchy.finest
    report = NSReport()
    penalty = penalty_for(nu, cfg.penalty_ratio)
    rate = ncfg.pseudo_time_rate
    base = HDGForm(mesh, k, nu, beta, f=f, bc=bc, penalty=penalty)
    sol, res, rep = solve_linear(hierarchy, base, cfg, "gmres")
    report.stokes_iterations = rep.inner_iterations
    if sol is None:
        report.status, report.message = "NA", rep.message
        return None, report
    report.div_u.append(rep.div_u)
    space = base.space

    # Picard: C(u_prev; u, v), total form
    for it in range(ncfg.max_picard):
        form = base.with_(wind=sol, mass_shift=rate, mass_ref=sol if rate else None,
                          _space=space)
        x0 = (sol.u - _lift(base)) if ncfg.warm_start else None
        new, res, rep = solve_linear(hierarchy, form, cfg, "gmres", x0=x0,
                                     p0=sol.p_c if ncfg.warm_start else None)
        if new is None:
            report.status, report.message = "NA", rep.message
            return sol, report
        report.picard_iterations.append(rep.inner_iterations)
        report.div_u.append(rep.div_u)
        d = HDGSolution(k, new.u - sol.u, new.u_o - sol.u_o, new.L, new.p_o, new.p_c)
        upd = velocity_l2(mesh, k, d)
        report.picard_updates.append(upd)
        log.info("picard %d: |du| = %.3e, its = %s", it + 1, upd, rep.inner_iterations)
        sol = new
        if upd < ncfg.picard_tol:
            break
    else:
        report.picard_converged = False

    # Newton: increments with the nonlinear residual as right-hand side; the
    # pseudo-time mass term is moved to the load at the current state so the
    # residual stays the steady one
    report.newton_residuals.append(nonlinear_residual(base, sol))
    for it in range(ncfg.max_newton):
        form = base.with_(wind=sol, newton=True, mass_shift=rate, mass_ref=sol if rate else None,
                          _space=space)
        delta, res, rep = solve_linear(hierarchy, form, cfg, "gmres", offset=sol.u,
                                       top_is_exact=True)
        if delta is None:
            report.status, report.message = "NA", rep.message
            return sol, report
        report.newton_iterations.append(rep.inner_iterations)
        sol = sol + delta
        report.div_u.append(rep.div_u)
        upd = velocity_l2(mesh, k, delta)
        unorm = velocity_l2(mesh, k, sol)
        report.newton_updates.append(upd)
        report.newton_residuals.append(nonlinear_residual(base, sol))
        log.info("newton %d: |du| = %.3e, its = %s", it + 1, upd, rep.inner_iterations)
        if upd <= max(ncfg.newton_rel_tol * unorm, ncfg.newton_abs_tol):
            break
        # round-off plateau: the update no longer contracts and is already tiny
        if it and upd > 0.9 * report.newton_updates[-2] and upd <= 1e-6 * unorm:
            report.message = "newton update stagnated at round-off level"
            break
    else:
        report.status = "newton-maxiter"
    return sol, report


def _lift(form):
    return dirichlet_lift(form.mesh, form.k, form.bc)


def nonlinear_residual(base, sol):
    """Euclidean norm of the steady nonlinear residual at ``sol``.

    Covers the element equations, the free global rows and the divergence
    of the facet velocity.
    """
    form = base.with_(wind=sol, newton=False, mass_shift=0.0, mass_ref=None)
    rl, rg = full_residual(form, sol)
    fixed = is_boundary_dof_mask(base.mesh, base.k)
    div = divergence_matrix(base.mesh, base.k) @ sol.u
    return float(np.sqrt(np.sum(rl ** 2) + np.sum(rg[~fixed] ** 2) + np.sum(div ** 2)))
