import numpy as np
import pytest
import scipy.sparse.linalg as spla

from hdivmg.hdg import HDGForm, assemble_condensed, full_residual
from hdivmg.mesh import MeshHierarchy, Rectangle, build_structured_mesh
from hdivmg.ns_driver import SolverConfig, solve_stokes
from hdivmg.postprocess import measure_errors
from hdivmg.uzawa import penalty_for


class Polynomial:
    """Divergence-free field of degree ``deg`` with a matching pressure."""

    def __init__(self, deg, nu, beta):
        self.deg, self.nu, self.beta = deg, nu, beta

    def u(self, x, y):
        if self.deg == 0:
            return np.stack([np.full_like(x, 1.0), np.full_like(x, -2.0)])
        return np.stack([x - 2 * y, x - y])

    def grad_u(self, x, y):
        g = np.zeros((2, 2, np.size(x)))
        if self.deg:
            g[0, 0], g[0, 1], g[1, 0], g[1, 1] = 1, -2, 1, -1
        return g

    def L(self, x, y):
        return -self.nu * self.grad_u(x, y)

    def p(self, x, y):
        return (x + y - 1.0) if self.deg else np.zeros_like(x)

    def f(self, x, y):
        gp = np.stack([np.ones_like(x), np.ones_like(x)]) if self.deg else 0.0
        return self.beta * self.u(x, y) + gp


@pytest.mark.parametrize("k,deg,beta", [(0, 0, 0.0), (0, 0, 10.0), (1, 1, 0.0),
                                        (1, 1, 1e3), (2, 1, 1.0)])
def test_reproduces_polynomial_solutions(k, deg, beta):
    ex = Polynomial(deg, 0.5, beta)
    h = MeshHierarchy.build(build_structured_mesh(Rectangle(), 2), 1)
    sol, _, rep = solve_stokes(h, k, 0.5, beta, f=ex.f, bc=ex.u,
                               cfg=SolverConfig(direct=True, n_outer=4))
    err = measure_errors(h.finest, k, sol, ex, 0.5, beta)
    assert err.e_u < 1e-8 and err.e_L < 1e-8 and err.div_u < 1e-8
    assert err.e_ustar < 1e-8


@pytest.mark.parametrize("k", [0, 1, 2])
def test_condensed_stokes_is_spd(square4, k):
    cs = assemble_condensed(HDGForm(square4, k, 1.0, 2.0, penalty=10.0))
    A = cs.A
    assert spla.norm(A - A.T) <= 1e-12 * spla.norm(A)
    free = ~cs.fixed
    Af = A[free][:, free].toarray()
    assert np.linalg.eigvalsh(Af).min() > 0


def test_grad_div_penalty_is_additive(square4):
    f0 = HDGForm(square4, 1, 1.0, penalty=0.0)
    a0 = assemble_condensed(f0)
    a1 = assemble_condensed(f0.with_(penalty=7.0))
    assert spla.norm(a1.A - a0.A - 7.0 * a0.grad_div()) <= 1e-12 * spla.norm(a1.A)


def test_full_residual_vanishes_at_solution():
    h = MeshHierarchy.build(build_structured_mesh(Rectangle(), 2), 2)
    ex = Polynomial(1, 1.0, 0.0)
    f = lambda x, y: np.stack([np.sin(3 * x) * y, np.cos(y) + x])
    form = HDGForm(h.finest, 1, 1.0, 0.0, f=f, bc=ex.u, penalty=penalty_for(1.0))
    sol, _, _ = solve_stokes(h, 1, 1.0, 0.0, f=f, bc=ex.u, cfg=SolverConfig(direct=True, n_outer=6))
    rl, rg = full_residual(form, sol)
    free = ~assemble_condensed(form).fixed
    assert np.abs(rl).max() < 1e-8
    assert np.abs(rg[free]).max() < 1e-8


@pytest.mark.parametrize("kw", [dict(nu=0.0), dict(nu=1.0, beta=-1.0),
                                dict(nu=1.0, newton=True)])
def test_form_validation(square4, kw):
    with pytest.raises(ValueError):
        HDGForm(square4, 1, **kw)
