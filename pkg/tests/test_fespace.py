from math import factorial

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hdivmg.fespace import (REF_NORMALS, build_rt_space, dim_p, facet_dirichlet_moments,
                            facet_quadrature, is_boundary_dof_mask, legendre_table,
                            quadrature, ref_facet_points, ref_rt_tables, reference_rt)
from hdivmg.hdg import divergence_matrix


@given(st.integers(0, 8), st.integers(0, 8))
def test_quadrature_exact_on_monomials(a, b):
    q = quadrature(a + b)
    x, y = q.xy.T
    exact = factorial(a) * factorial(b) / factorial(a + b + 2)
    assert np.isclose(np.sum(q.weights * x ** a * y ** b), exact, rtol=1e-13, atol=1e-16)


def test_facet_quadrature_exact():
    t, w = facet_quadrature(7)
    assert np.isclose(np.sum(w * t ** 7), 1 / 8)


@pytest.mark.parametrize("k", [0, 1, 2, 3])
def test_reference_normal_traces(k):
    """Facet functions carry Legendre normal traces on their own facet only."""
    t, w = facet_quadrature(2 * k + 2)
    leg = legendre_table(k, 2 * t - 1)
    ref = reference_rt(k)
    n_int = k * (k + 1)
    for j in range(3):
        p = ref_facet_points(j, t)
        tab = ref_rt_tables(k, p[:, 0], p[:, 1])
        vn = np.einsum("bcq,c->bq", tab.val, REF_NORMALS[j])
        assert np.allclose(vn[:n_int], 0, atol=1e-12)
        for jj in range(3):
            block = vn[n_int + jj * (k + 1): n_int + (jj + 1) * (k + 1)]
            assert np.allclose(block, leg if jj == j else 0, atol=1e-12)
    assert ref.n_div_free == n_int - (dim_p(k) - 1)


@pytest.mark.parametrize("k", [0, 1, 2])
def test_global_normal_continuity(square4, rng, k):
    """u.n from both sides agrees at facet midpoints for any global vector."""
    mesh = square4
    space = build_rt_space(mesh, k)
    u = rng.standard_normal(space.n_facet_dofs)
    inner = np.flatnonzero(mesh.facet_elements[:, 1] >= 0)
    vals = []
    for side in range(2):
        e = mesh.facet_elements[inner, side]
        j = np.argmax(mesh.element_facets[e] == inner[:, None], axis=1)
        out = []
        for jj in range(3):
            sel = j == jj
            p = ref_facet_points(jj, np.array([0.5]))
            val, _, _ = space.evaluate(e[sel], p[:, 0], p[:, 1])
            c = u[space.element_dofs()[e[sel]]]
            v = np.einsum("eb,ebc->ec", c, val[:, space.n_interior:, :, 0])
            out.append((np.flatnonzero(sel), np.einsum("ec,ec->e", v, mesh.facet_normals[inner[sel]])))
        arr = np.empty(len(inner))
        for idx, v in out:
            arr[idx] = v
        vals.append(arr)
    assert np.allclose(vals[0], vals[1], atol=1e-12)


@pytest.mark.parametrize("k", [0, 1, 2])
def test_divergence_matrix_matches_quadrature(square4, rng, k):
    mesh = square4
    space = build_rt_space(mesh, k)
    u = rng.standard_normal(2 * space.n_facet_dofs)
    q = quadrature(k)
    e = np.arange(mesh.n_elements)
    _, _, div = space.evaluate(e, *q.xy.T)
    c = u[space.element_dofs()]
    integral = np.einsum("eb,ebq,q->e", c, div[:, space.n_interior:], q.weights) * 2 * mesh.areas
    assert np.allclose(divergence_matrix(mesh, k) @ u, -integral, atol=1e-12)


@pytest.mark.parametrize("k", [0, 1, 2])
def test_moments_reproduce_polynomials(square4, k):
    mesh = square4
    def g(x, y):
        return np.stack([x ** k - 2 * y ** k, (x + y) ** k + 3.0])
    cn, ct = facet_dirichlet_moments(mesh, k, g)
    t = np.array([0.1, 0.5, 0.83])
    a = mesh.vertices[mesh.facets[:, 0]]
    b = mesh.vertices[mesh.facets[:, 1]]
    pts = a[:, None] + t[None, :, None] * (b - a)[:, None]
    val = g(pts[..., 0], pts[..., 1])
    leg = legendre_table(k, 2 * t - 1)
    assert np.allclose(np.einsum("fi,iq->fq", cn, leg),
                       np.einsum("cfq,fc->fq", val, mesh.facet_normals), atol=1e-12)
    assert np.allclose(np.einsum("fi,iq->fq", ct, leg),
                       np.einsum("cfq,fc->fq", val, mesh.facet_tangents), atol=1e-12)


def test_boundary_mask(square4):
    m = is_boundary_dof_mask(square4, 1)
    assert m.sum() == 2 * 2 * 16


@pytest.mark.parametrize("k", [-1, 4, 1.5])
def test_order_validation(square4, k):
    with pytest.raises(ValueError):
        build_rt_space(square4, k)
