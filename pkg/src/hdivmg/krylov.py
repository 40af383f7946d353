"""Preconditioned CG and full right-preconditioned GMRes."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class KrylovError(RuntimeError):
    """Base class for inner-solver failures."""


class IndefiniteError(KrylovError):
    """CG met ``r^T z <= 0`` or ``p^T A p <= 0``."""


class MaxIterError(KrylovError):
    pass


@dataclass(frozen=True)
class KrylovConfig:
    rel_tol: float = 1e-8
    abs_tol: float = 1e-10
    max_iter: int = 500
    method: str = "cg"

    def __post_init__(self):
        if self.rel_tol <= 0 or self.abs_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.method not in ("cg", "gmres"):
            raise ValueError(f"unknown method {self.method!r}")


@dataclass
class KrylovResult:
    x: np.ndarray
    iterations: int
    history: list = field(default_factory=list)
    converged: bool = True
    status: str = "ok"


def _as_apply(op):
    if op is None:
        return lambda v: v.copy()
    if callable(op):
        return op
    return lambda v: op @ v


def _inf_norm(op):
    """``||A||_inf`` for explicit matrices, 0 for operators given as callables."""
    if op is None or callable(op) or not hasattr(op, "shape"):
        return 0.0
    return float(abs(op).sum(axis=1).max()) if op.shape[0] else 0.0


def pcg(A, M, b, x0=None, cfg=KrylovConfig(), raise_on_fail=True):
    """Preconditioned conjugate gradients.

    Stops when ``||b - A x|| <= max(rel_tol ||b||, abs_tol)``.

    Raises
    ------
    IndefiniteError
        when a non-positive curvature or preconditioned inner product
        shows up; this is reported rather than recovered from.
    """
    A, M = _as_apply(A), _as_apply(M)
    b = np.asarray(b, dtype=float)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    r = b - A(x) if x0 is not None else b.copy()
    tol = max(cfg.rel_tol * np.linalg.norm(b), cfg.abs_tol)
    hist = [float(np.linalg.norm(r))]
    if hist[0] <= tol:
        return KrylovResult(x, 0, hist)
    z = M(r)
    rz = float(r @ z)
    if rz <= 0:
        return _fail(IndefiniteError("preconditioner not positive (r^T z <= 0)"), x, 0, hist,
                     raise_on_fail)
    p = z.copy()
    for it in range(1, cfg.max_iter + 1):
        Ap = A(p)
        pAp = float(p @ Ap)
        if pAp <= 0:
            return _fail(IndefiniteError("operator not positive (p^T A p <= 0)"), x, it, hist,
                         raise_on_fail)
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        hist.append(float(np.linalg.norm(r)))
        if hist[-1] <= tol:
            return KrylovResult(x, it, hist)
        z = M(r)
        rz_new = float(r @ z)
        if rz_new <= 0:
            return _fail(IndefiniteError("preconditioner not positive (r^T z <= 0)"), x, it,
                         hist, raise_on_fail)
        p = z + (rz_new / rz) * p
        rz = rz_new
    return _fail(MaxIterError(f"no convergence in {cfg.max_iter} iterations"), x, cfg.max_iter,
                 hist, raise_on_fail)


def _fail(exc, x, it, hist, raise_on_fail):
    if raise_on_fail:
        exc.iterations = it
        exc.history = hist
        raise exc
    status = "NA" if isinstance(exc, IndefiniteError) else "maxiter"
    return KrylovResult(x, it, hist, converged=False, status=status)


def gmres(A, M, b, x0=None, cfg=KrylovConfig(method="gmres"), raise_on_fail=True):
    """Full (non-restarted) GMRes with right preconditioning.

    The least-squares residual equals ``||b - A x||`` in exact arithmetic;
    the true residual is recomputed at exit and used for the final verdict.
    """
    anorm = _inf_norm(A)
    A, M = _as_apply(A), _as_apply(M)
    b = np.asarray(b, dtype=float)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    r = b - A(x) if x0 is not None else b.copy()
    tol = max(cfg.rel_tol * np.linalg.norm(b), cfg.abs_tol)
    beta = float(np.linalg.norm(r))
    hist = [beta]
    if beta <= tol:
        return KrylovResult(x, 0, hist)
    m = cfg.max_iter
    V = [r / beta]
    Z = []
    H = np.zeros((m + 1, m))
    cs = np.zeros(m)
    sn = np.zeros(m)
    g = np.zeros(m + 1)
    g[0] = beta
    it = 0
    for j in range(m):
        it = j + 1
        z = M(V[j])
        Z.append(z)
        w = A(z)
        for i in range(j + 1):  # modified Gram-Schmidt
            H[i, j] = float(w @ V[i])
            w -= H[i, j] * V[i]
        H[j + 1, j] = float(np.linalg.norm(w))
        for i in range(j):
            t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
            H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
            H[i, j] = t
        den = np.hypot(H[j, j], H[j + 1, j])
        breakdown = H[j + 1, j] < 1e-14 * max(1.0, abs(H[j, j]))
        cs[j], sn[j] = H[j, j] / den, H[j + 1, j] / den
        sub = H[j + 1, j]
        H[j, j] = den
        H[j + 1, j] = 0.0
        g[j + 1] = -sn[j] * g[j]
        g[j] = cs[j] * g[j]
        hist.append(abs(g[j + 1]))
        if hist[-1] <= tol or breakdown:
            break
        V.append(w / sub)
    y = np.linalg.solve(np.triu(H[:it, :it]), g[:it])
    for i in range(it):
        x += y[i] * Z[i]
    true_res = float(np.linalg.norm(b - A(x)))
    # below eps ||A|| ||x|| the true residual is round-off and cannot improve
    floor = np.finfo(float).eps * anorm * float(np.linalg.norm(x))
    if true_res <= max(tol, floor) * (1 + 1e-6) or (hist[-1] <= tol and true_res <= 10 * tol):
        return KrylovResult(x, it, hist)
    exc = MaxIterError(f"GMRes stopped at {it} iterations with residual {true_res:.3e}")
    return _fail(exc, x, it, hist, raise_on_fail)
