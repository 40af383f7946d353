"""H(div)-conforming HDG solvers for generalized Stokes and Navier-Stokes
in 2D, with augmented-Lagrangian Uzawa outer iterations and hp-multigrid
preconditioned Krylov inner solvers."""

from .mesh import MeshHierarchy, build_structured_mesh, Rectangle, StepDomain
from .hdg import HDGForm, HDGSolution, assemble_condensed
from .ns_driver import (NonlinearConfig, SolverConfig, solve_navier_stokes,
                        solve_stokes)
from .postprocess import measure_errors, postprocess_velocity

__all__ = ["MeshHierarchy", "build_structured_mesh", "Rectangle", "StepDomain", "HDGForm",
           "HDGSolution", "assemble_condensed", "NonlinearConfig", "SolverConfig",
           "solve_navier_stokes", "solve_stokes", "measure_errors", "postprocess_velocity"]

__version__ = "0.1.0"
