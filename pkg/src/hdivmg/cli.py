"""Command-line harness: ``hdivmg <subcommand> [options]``.

Every run writes CSV rows with a fixed header.  ``--level`` counts uniform
refinements of the 2 x 2 coarse mesh (level 0).
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import sys
from pathlib import Path

import numpy as np
import scipy.io

from .cr import congruence_gap
from .hdg import HDGForm, assemble_condensed
from .krylov import KrylovConfig
from .mesh import MeshHierarchy, build_structured_mesh, dump_mesh, Rectangle
from .multigrid import build_mg, contraction_factor
from .ns_driver import (NonlinearConfig, SolverConfig, solve_linear, solve_navier_stokes,
                        solve_stokes)
from .postprocess import eoc_last_usable, measure_errors
from .problems import Manufactured, cavity_bc, cavity_mesh, step_bc, step_mesh
from .uzawa import UzawaProblem, penalty_for

log = logging.getLogger("hdivmg")

HEADER = ["run_id", "subcommand", "k", "level", "nu", "beta", "m", "cycle", "outer",
          "inner_iters", "avg_picard", "avg_newton", "e_u", "e_L", "e_ustar", "div_u",
          "eoc_u", "eoc_L", "eoc_ustar", "status"]

EQUIV_PAIRS = [(1.0, 0.0), (1.0, 1e3), (1e-2, 0.0)]
EQUIV_TOL = 1e-12
NAN = float("nan")


def _row(args, idx, **kw):
    row = dict.fromkeys(HEADER, "")
    row.update(run_id=f"{args.subcommand}-{idx:03d}", subcommand=args.subcommand,
               outer=args.outer)
    row.update(kw)
    return row


def _fmt(v):
    if isinstance(v, float):
        return "nan" if np.isnan(v) else f"{v:.6g}"
    return v


class _Writer:
    def __init__(self, path):
        self.fh = open(path, "w", newline="") if path else sys.stdout
        self.w = csv.DictWriter(self.fh, fieldnames=HEADER)
        self.w.writeheader()

    def write(self, row):
        self.w.writerow({k: _fmt(v) for k, v in row.items()})
        self.fh.flush()

    def close(self):
        if self.fh is not sys.stdout:
            self.fh.close()


def _solver_config(args, m, cycle):
    return SolverConfig(cycle=cycle, m=m, smoother=args.smoother, n_outer=args.outer,
                        penalty_ratio=10.0 ** args.penalty_exponent,
                        embedding=args.embedding, mg_trace=bool(args.mg_trace),
                        direct=args.direct)


def _diagnostics(args, hierarchy, k, nu, beta, bc, trace):
    mesh = hierarchy.finest
    if args.dump_mesh:
        dump_mesh(mesh, args.dump_mesh)
    if args.dump_matrix:
        form = HDGForm(mesh, k, nu, beta, bc=bc,
                       penalty=penalty_for(nu, 10.0 ** args.penalty_exponent))
        prob = UzawaProblem(assemble_condensed(form))
        scipy.io.mmwrite(args.dump_matrix, prob.A)
    if args.mg_trace and trace is not None:
        Path(args.mg_trace).write_text(json.dumps(trace))


def _flow_runs(args, writer, mesh_fn, bc):
    idx = 0
    for k, level, m, cycle in itertools.product(args.k, args.level, args.m, args.cycle):
        hierarchy = MeshHierarchy.build(mesh_fn(), level)
        cfg = _solver_config(args, m, cycle)
        base = dict(k=k, level=level, nu=args.nu, beta=args.beta, m=m, cycle=cycle)
        if args.ns:
            sol, rep = solve_navier_stokes(hierarchy, k, args.nu, args.beta, bc=bc, cfg=cfg,
                                           ncfg=NonlinearConfig(
                                               pseudo_time_rate=args.pseudo_time_rate))
            div = max(rep.div_u) if rep.div_u else NAN
            row = _row(args, idx, **base, inner_iters=float(np.mean(rep.stokes_iterations)),
                       avg_picard=rep.avg_picard, avg_newton=rep.avg_newton, div_u=div,
                       status=rep.status)
            trace = None
        else:
            _, _, rep = solve_stokes(hierarchy, k, args.nu, args.beta, bc=bc, cfg=cfg,
                                     recover=False)
            row = _row(args, idx, **base, inner_iters=rep.avg_inner if rep.status == "ok"
                       else NAN, div_u=rep.div_u, status=rep.status)
            trace = rep.mg_trace
        log.info("%s k=%d level=%d m=%d cycle=%s: %s", args.subcommand, k, level, m, cycle,
                 row["status"])
        writer.write(row)
        idx += 1
    _diagnostics(args, hierarchy, k, args.nu, args.beta, bc, trace)
    return 0


def run_cavity(args, writer):
    return _flow_runs(args, writer, cavity_mesh, cavity_bc)


def run_bfs(args, writer):
    return _flow_runs(args, writer, step_mesh, step_bc)


EOC_GATES = dict(u=0.8, L=0.8, ustar=1.8)


def run_eoc(args, writer):
    """Manufactured-solution convergence study over consecutive levels."""
    failed = False
    idx = 0
    levels = list(range(args.start_level, args.start_level + args.levels))
    for k in args.k:
        ex = Manufactured(args.nu, args.beta, convection=args.ns)
        errs = []
        for level in levels:
            hierarchy = MeshHierarchy.build(ex.mesh(2), level)
            cfg = _solver_config(args, args.m[0], args.cycle[0])
            if args.ns:
                sol, rep = solve_navier_stokes(hierarchy, k, args.nu, args.beta, f=ex.f,
                                               cfg=cfg)
                status = rep.status
            else:
                sol, _, rep = solve_stokes(hierarchy, k, args.nu, args.beta, f=ex.f, cfg=cfg)
                status = rep.status
            if sol is None:
                errs.append((NAN, NAN, NAN, NAN))
                writer.write(_row(args, idx, k=k, level=level, nu=args.nu, beta=args.beta,
                                  m=args.m[0], cycle=args.cycle[0], status=status))
                idx += 1
                failed = True
                continue
            e = measure_errors(hierarchy.finest, k, sol, ex, args.nu, args.beta, level)
            errs.append((e.e_u, e.e_L, e.e_ustar, e.div_u))
            arr = np.array(errs)
            rates = [eoc_last_usable(arr[:, c]) if len(errs) > 1 else NAN for c in range(3)]
            row = _row(args, idx, k=k, level=level, nu=args.nu, beta=args.beta, m=args.m[0],
                       cycle=args.cycle[0], e_u=e.e_u, e_L=e.e_L, e_ustar=e.e_ustar,
                       div_u=e.div_u, eoc_u=rates[0], eoc_L=rates[1], eoc_ustar=rates[2],
                       status=status)
            if args.ns:
                row.update(avg_picard=rep.avg_picard, avg_newton=rep.avg_newton)
            else:
                row.update(inner_iters=rep.avg_inner)
            writer.write(row)
            idx += 1
        arr = np.array(errs)
        rates = [eoc_last_usable(arr[:, c]) for c in range(3)]
        ok = rates[0] >= k + EOC_GATES["u"] and rates[1] >= k + EOC_GATES["L"]
        if k >= 1:
            ok = ok and rates[2] >= k + EOC_GATES["ustar"]
        ok = ok and np.nanmax(arr[:, 3]) <= 1e-8
        if not ok:
            log.error("EOC gate failed for k=%d: %s", k, rates)
            failed = True
    return 1 if failed else 0


def run_equiv_check(args, writer):
    """Congruence of the lowest-order HDG matrix with the CR matrix."""
    pairs = EQUIV_PAIRS if args.all_pairs else [(args.nu, args.beta)]
    mesh = build_structured_mesh(Rectangle(), 2)
    hierarchy = MeshHierarchy.build(mesh, args.levels - 1)
    worst = 0.0
    idx = 0
    for level, fine in enumerate(hierarchy.levels):
        for nu, beta in pairs:
            gap = congruence_gap(fine, nu, beta, penalty_for(nu, 10.0 ** args.penalty_exponent))
            worst = max(worst, gap)
            status = "ok" if gap <= EQUIV_TOL else "fail"
            writer.write(_row(args, idx, k=0, level=level, nu=nu, beta=beta, e_u=gap,
                              status=status))
            idx += 1
    print(f"max relative Frobenius gap: {worst:.3e}", file=sys.stderr)
    return 0 if worst <= EQUIV_TOL else 1


def run_mg_study(args, writer):
    """Contraction factors of the lowest-order cycle and PCG counts."""
    idx = 0
    trace = {}
    for level, m, cycle in itertools.product(args.level, args.m, args.cycle):
        hierarchy = MeshHierarchy.build(cavity_mesh(), level)
        form = HDGForm(hierarchy.finest, 0, args.nu, args.beta, bc=cavity_bc,
                       penalty=penalty_for(args.nu, 10.0 ** args.penalty_exponent))
        mg = build_mg(hierarchy, form, cycle, m, args.smoother)
        rho = contraction_factor(mg, seed=args.seed)
        for k in args.k:
            _, _, rep = solve_stokes(hierarchy, k, args.nu, args.beta, bc=cavity_bc,
                                     cfg=_solver_config(args, m, cycle), recover=False)
            trace[f"level={level},m={m},cycle={cycle},k={k}"] = dict(
                contraction=rho, iterations=rep.inner_iterations, cycle_trace=rep.mg_trace)
            writer.write(_row(args, idx, k=k, level=level, nu=args.nu, beta=args.beta, m=m,
                              cycle=cycle, inner_iters=rep.avg_inner
                              if rep.status == "ok" else NAN, div_u=rep.div_u,
                              status=rep.status))
            log.info("level=%d m=%d cycle=%s contraction=%.3f", level, m, cycle, rho)
            idx += 1
    if args.mg_trace:
        Path(args.mg_trace).write_text(json.dumps(trace))
    return 0


COMMANDS = {"eoc": run_eoc, "cavity": run_cavity, "bfs": run_bfs,
            "equiv-check": run_equiv_check, "mg-study": run_mg_study}


def build_parser():
    p = argparse.ArgumentParser(prog="hdivmg", description=__doc__.splitlines()[0])
    p.add_argument("subcommand", choices=sorted(COMMANDS))
    p.add_argument("--k", type=int, nargs="+", default=[0], help="polynomial order(s)")
    p.add_argument("--level", type=int, nargs="+", default=[4],
                   help="refinements of the coarse mesh")
    p.add_argument("--levels", type=int, default=4, help="number of levels (eoc, equiv-check)")
    p.add_argument("--start-level", type=int, default=1, help="first level of an eoc study")
    p.add_argument("--nu", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=0.0)
    p.add_argument("--m", type=int, nargs="+", default=[1], help="smoothing steps")
    p.add_argument("--cycle", choices=["v", "w"], nargs="+", default=["v"])
    p.add_argument("--penalty-exponent", type=float, default=6.0,
                   help="log10 of (nu eps)^-1")
    p.add_argument("--outer", type=int, default=2, help="Uzawa steps")
    p.add_argument("--smoother", choices=["gs", "jacobi"], default="gs")
    p.add_argument("--embedding", choices=["cr", "inclusion"], default="cr")
    p.add_argument("--ns", action="store_true", help="Navier-Stokes instead of Stokes")
    p.add_argument("--pseudo-time-rate", type=float, default=0.0)
    p.add_argument("--direct", action="store_true", help="sparse LU inner solves")
    p.add_argument("--all-pairs", action="store_true",
                   help="equiv-check over the standard (nu, beta) pairs")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="CSV path (stdout by default)")
    p.add_argument("--dump-mesh", help="write the finest mesh")
    p.add_argument("--dump-matrix", help="write the condensed matrix (MatrixMarket)")
    p.add_argument("--mg-trace", help="write multigrid residual traces (JSON)")
    p.add_argument("--log-level", default="WARNING")
    return p


def validate(args):
    if any(k < 0 or k > 3 for k in args.k):
        raise SystemExit("--k must be in 0..3")
    if any(lv < 0 for lv in args.level) or args.levels < 1 or args.start_level < 0:
        raise SystemExit("levels must be non-negative")
    if any(m < 1 for m in args.m):
        raise SystemExit("--m must be >= 1")
    if args.nu <= 0 or args.beta < 0:
        raise SystemExit("need nu > 0 and beta >= 0")
    if args.outer < 1:
        raise SystemExit("--outer must be >= 1")


def main(argv=None):
    args = build_parser().parse_args(argv)
    validate(args)
    logging.basicConfig(level=getattr(logging, args.log_level.upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    np.random.seed(args.seed)
    writer = _Writer(args.out)
    try:
        return COMMANDS[args.subcommand](args, writer)
    finally:
        writer.close()


if __name__ == "__main__":
    sys.exit(main())
