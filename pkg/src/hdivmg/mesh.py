"""Conforming triangular meshes, uniform refinement and vertex patches.

Conventions
-----------
Elements are stored counter-clockwise.  Local facet ``j`` of an element is
the edge opposite local vertex ``j``, i.e. ``(e[j+1], e[j+2])``.  Every facet
is stored with ascending vertex indices ``(a, b)``; its global unit normal is
``n_F = (t_y, -t_x)`` with ``t_F = (x_b - x_a) / |F|``.  The orientation sign
of facet ``j`` in element ``K`` is ``+1`` when ``n_F`` points out of ``K``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from enum import IntEnum
from pathlib import Path

import numpy as np


class FacetTag(IntEnum):
    INTERIOR = 0
    DIRICHLET = 1
    OUTFLOW = 2


class FacetClass(IntEnum):
    INTERIOR_OF_COARSE_ELEMENT = 0
    ON_COARSE_SKELETON = 1
    ON_BOUNDARY = 2


@dataclass(frozen=True)
class Rectangle:
    """Axis-aligned rectangle ``[x0, x1] x [y0, y1]``, all Dirichlet."""

    x0: float = 0.0
    x1: float = 1.0
    y0: float = 0.0
    y1: float = 1.0

    def boxes(self):
        return [(self.x0, self.x1, self.y0, self.y1)]

    def tag(self, mid):
        return np.full(len(mid), FacetTag.DIRICHLET, dtype=np.int8)


@dataclass(frozen=True)
class StepDomain:
    """Backward-facing step ``([0.5,4]x[0,0.5]) u ([0,4]x[0.5,1])``.

    The facets on ``x = 4`` are outflow, every other boundary facet is
    Dirichlet (inlet at ``x = 0`` and the walls).
    """

    length: float = 4.0
    step_x: float = 0.5
    step_y: float = 0.5

    def boxes(self):
        return [
            (self.step_x, self.length, 0.0, self.step_y),
            (0.0, self.length, self.step_y, 1.0),
        ]

    def tag(self, mid):
        tags = np.full(len(mid), FacetTag.DIRICHLET, dtype=np.int8)
        tags[np.abs(mid[:, 0] - self.length) < 1e-12] = FacetTag.OUTFLOW
        return tags


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable conforming triangulation with facet connectivity.

    Attributes
    ----------
    vertices : (nV, 2) float array
    elements : (nE, 3) int array, counter-clockwise
    facets : (nF, 2) int array, ascending vertex indices
    element_facets : (nE, 3) int array, local facet j opposite vertex j
    element_signs : (nE, 3) float array of +-1, global normal outward or not
    facet_elements : (nF, 2) int array, ``-1`` marks a missing neighbour
    boundary_tags : (nF,) int8 array of :class:`FacetTag`
    """

    vertices: np.ndarray
    elements: np.ndarray
    facets: np.ndarray
    element_facets: np.ndarray
    element_signs: np.ndarray
    facet_elements: np.ndarray
    boundary_tags: np.ndarray

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_elements(self):
        return len(self.elements)

    @property
    def n_facets(self):
        return len(self.facets)

    @cached_property
    def jacobians(self):
        v = self.vertices[self.elements]
        return np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]], axis=-1)

    @cached_property
    def areas(self):
        v = self.vertices[self.elements]
        d1 = v[:, 1] - v[:, 0]
        d2 = v[:, 2] - v[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @cached_property
    def facet_lengths(self):
        d = self.vertices[self.facets[:, 1]] - self.vertices[self.facets[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    @cached_property
    def facet_tangents(self):
        d = self.vertices[self.facets[:, 1]] - self.vertices[self.facets[:, 0]]
        return d / np.hypot(d[:, 0], d[:, 1])[:, None]

    @cached_property
    def facet_normals(self):
        t = self.facet_tangents
        return np.stack([t[:, 1], -t[:, 0]], axis=1)

    @property
    def facet_midpoints(self):
        return 0.5 * (self.vertices[self.facets[:, 0]] + self.vertices[self.facets[:, 1]])

    @property
    def h(self):
        return float(self.facet_lengths.max())

    @property
    def dirichlet_facets(self):
        return np.flatnonzero(self.boundary_tags == FacetTag.DIRICHLET)

    @property
    def has_outflow(self):
        return bool(np.any(self.boundary_tags == FacetTag.OUTFLOW))

    def check(self):
        """Assert the structural invariants; returns self for chaining."""
        if np.any(self.areas <= 0):
            raise ValueError("non-positive element area")
        nb = (self.facet_elements >= 0).sum(axis=1)
        interior = self.boundary_tags == FacetTag.INTERIOR
        if np.any(nb[interior] != 2) or np.any(nb[~interior] != 1):
            raise ValueError("facet/element incidence is not conforming")
        return self


def _connectivity(vertices, elements, tag_boundary):
    """Derive facets and incidence from an element list."""
    nE = len(elements)
    loc = np.array([[1, 2], [2, 0], [0, 1]])
    edges = elements[:, loc]  # (nE, 3, 2)
    lo = edges.min(axis=2)
    hi = edges.max(axis=2)
    key = lo.astype(np.int64) * (len(vertices) + 1) + hi
    uniq, inv = np.unique(key.ravel(), return_inverse=True)
    inv = inv.reshape(nE, 3)
    facets = np.stack([uniq // (len(vertices) + 1), uniq % (len(vertices) + 1)], axis=1)
    signs = np.where(edges[:, :, 0] < edges[:, :, 1], 1.0, -1.0)

    nF = len(facets)
    facet_elements = np.full((nF, 2), -1, dtype=np.int64)
    # the element that sees the facet with outward = global normal goes first
    elem = np.repeat(np.arange(nE), 3)
    f = inv.ravel()
    s = signs.ravel()
    facet_elements[f[s > 0], 0] = elem[s > 0]
    facet_elements[f[s < 0], 1] = elem[s < 0]
    # boundary facets: move the single neighbour into column 0
    only_second = facet_elements[:, 0] < 0
    facet_elements[only_second, 0] = facet_elements[only_second, 1]
    facet_elements[only_second, 1] = -1

    boundary = facet_elements[:, 1] < 0
    tags = np.zeros(nF, dtype=np.int8)
    if boundary.any():
        mid = 0.5 * (vertices[facets[boundary, 0]] + vertices[facets[boundary, 1]])
        tags[boundary] = tag_boundary(facets[boundary], mid)
    return facets.astype(np.int64), inv.astype(np.int64), signs, facet_elements, tags


def mesh_from_arrays(vertices, elements, tag_boundary=None):
    """Build a :class:`Mesh` from raw arrays, fixing element orientation.

    ``tag_boundary(vertex_pairs, midpoints)`` returns the tag of each
    boundary facet; by default all boundary facets are Dirichlet.
    """
    vertices = np.asarray(vertices, dtype=float)
    elements = np.array(elements, dtype=np.int64)
    v = vertices[elements]
    det = (v[:, 1, 0] - v[:, 0, 0]) * (v[:, 2, 1] - v[:, 0, 1]) - (
        v[:, 1, 1] - v[:, 0, 1]
    ) * (v[:, 2, 0] - v[:, 0, 0])
    if np.any(np.abs(det) <= 0):
        raise ValueError("degenerate element")
    flip = det < 0
    elements[flip] = elements[flip][:, [0, 2, 1]]
    if tag_boundary is None:
        def tag_boundary(pairs, mid):
            return np.full(len(pairs), FacetTag.DIRICHLET, dtype=np.int8)
    facets, ef, signs, fe, tags = _connectivity(vertices, elements, tag_boundary)
    return Mesh(vertices, elements, facets, ef, signs, fe, tags).check()


def build_structured_mesh(domain, n):
    """Structured criss-cross-free triangulation with ``n`` cells per unit.

    Every square cell of side ``1/n`` inside the domain is split along its
    lower-left to upper-right diagonal.

    Parameters
    ----------
    domain : Rectangle or StepDomain
        Union of axis-aligned boxes with coordinates on the ``1/n`` grid.
    n : int
        Subdivisions per unit length, ``n >= 1``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    cells = set()
    for x0, x1, y0, y1 in domain.boxes():
        if x1 <= x0 or y1 <= y0:
            raise ValueError("degenerate domain")
        i0, i1 = round(x0 * n), round(x1 * n)
        j0, j1 = round(y0 * n), round(y1 * n)
        if not np.allclose([i0, i1, j0, j1], [x0 * n, x1 * n, y0 * n, y1 * n]):
            raise ValueError("domain corners must lie on the 1/n grid")
        cells.update((i, j) for i in range(i0, i1) for j in range(j0, j1))
    if not cells:
        raise ValueError("degenerate domain")
    cells = sorted(cells, key=lambda c: (c[1], c[0]))
    index = {}
    verts = []

    def vid(i, j):
        if (i, j) not in index:
            index[(i, j)] = len(verts)
            verts.append((i / n, j / n))
        return index[(i, j)]

    corners = sorted({(i + a, j + b) for i, j in cells for a in (0, 1) for b in (0, 1)},
                     key=lambda c: (c[1], c[0]))
    for c in corners:
        vid(*c)
    elems = []
    for i, j in cells:
        v00, v10, v01, v11 = vid(i, j), vid(i + 1, j), vid(i, j + 1), vid(i + 1, j + 1)
        elems.append((v00, v10, v11))
        elems.append((v00, v11, v01))
    return mesh_from_arrays(np.array(verts), np.array(elems),
                            lambda pairs, mid: domain.tag(mid))


@dataclass(frozen=True, eq=False)
class Refinement:
    """Maps from one uniform refinement step.

    ``facet_parent[f]`` is the coarse facet for skeleton children and the
    coarse element for interior children.
    """

    parent_element: np.ndarray
    facet_class: np.ndarray
    facet_parent: np.ndarray


def refine_uniform(mesh):
    """Red refinement: split each triangle into 4 through edge midpoints.

    Returns
    -------
    fine : Mesh
    refinement : Refinement
    """
    nV, nE = mesh.n_vertices, mesh.n_elements
    verts = np.vstack([mesh.vertices, mesh.facet_midpoints])
    e = mesh.elements
    m = nV + mesh.element_facets  # m[:, j] midpoint opposite vertex j
    children = np.stack([
        np.stack([e[:, 0], m[:, 2], m[:, 1]], axis=1),
        np.stack([m[:, 2], e[:, 1], m[:, 0]], axis=1),
        np.stack([m[:, 1], m[:, 0], e[:, 2]], axis=1),
        np.stack([m[:, 0], m[:, 1], m[:, 2]], axis=1),
    ], axis=1).reshape(-1, 3)
    parent = np.repeat(np.arange(nE), 4)

    coarse_tags = mesh.boundary_tags

    def tag(pairs, mid):
        # boundary fine facets join an old vertex to a coarse facet midpoint
        return coarse_tags[pairs[:, 1] - nV]

    fine = Mesh(verts, children, *_connectivity(verts, children, tag)).check()

    ff = fine.facets
    is_skel = ff[:, 0] < nV  # one endpoint is an old vertex
    fclass = np.where(is_skel, FacetClass.ON_COARSE_SKELETON,
                      FacetClass.INTERIOR_OF_COARSE_ELEMENT).astype(np.int8)
    fparent = np.empty(len(ff), dtype=np.int64)
    fparent[is_skel] = ff[is_skel, 1] - nV
    fparent[~is_skel] = parent[fine.facet_elements[~is_skel, 0]]
    fclass[is_skel & (fine.boundary_tags != FacetTag.INTERIOR)] = FacetClass.ON_BOUNDARY
    return fine, Refinement(parent, fclass, fparent)


@dataclass(frozen=True, eq=False)
class MeshHierarchy:
    """Nested meshes; ``levels[0]`` is the coarsest.

    ``refinements[l]`` maps ``levels[l]`` to ``levels[l + 1]``.
    """

    levels: list
    refinements: list = field(default_factory=list)

    @classmethod
    def build(cls, coarse, n_refine):
        levels, refs = [coarse], []
        for _ in range(n_refine):
            fine, ref = refine_uniform(levels[-1])
            levels.append(fine)
            refs.append(ref)
        return cls(levels, refs)

    @property
    def finest(self):
        return self.levels[-1]

    def __len__(self):
        return len(self.levels)


@dataclass(frozen=True)
class VertexPatch:
    vertex: int
    elements: np.ndarray
    facets: np.ndarray


def _csr_incidence(rows, cols, n_rows):
    order = np.lexsort((cols, rows))
    ptr = np.zeros(n_rows + 1, dtype=np.int64)
    np.add.at(ptr, rows + 1, 1)
    return np.cumsum(ptr), cols[order]


def vertex_facet_incidence(mesh):
    """CSR ``(ptr, idx)`` of facets touching each vertex, ascending."""
    rows = mesh.facets.ravel()
    cols = np.repeat(np.arange(mesh.n_facets), 2)
    return _csr_incidence(rows, cols, mesh.n_vertices)


def vertex_element_incidence(mesh):
    rows = mesh.elements.ravel()
    cols = np.repeat(np.arange(mesh.n_elements), 3)
    return _csr_incidence(rows, cols, mesh.n_vertices)


def vertex_patches(mesh):
    """One :class:`VertexPatch` per vertex, in vertex order."""
    fp, fi = vertex_facet_incidence(mesh)
    ep, ei = vertex_element_incidence(mesh)
    return [VertexPatch(v, ei[ep[v]:ep[v + 1]], fi[fp[v]:fp[v + 1]])
            for v in range(mesh.n_vertices)]


def dump_mesh(mesh, path):
    """Write the plain-text mesh format read by :func:`load_mesh`."""
    path = Path(path)
    with path.open("w") as fh:
        fh.write(f"vertices {mesh.n_vertices} / elements {mesh.n_elements} "
                 f"/ facets {mesh.n_facets}\n")
        for x, y in mesh.vertices:
            fh.write(f"{x:.17g} {y:.17g}\n")
        for a, b, c in mesh.elements:
            fh.write(f"{a} {b} {c}\n")
        for (a, b), t in zip(mesh.facets, mesh.boundary_tags):
            fh.write(f"{a} {b} {FacetTag(t).name.lower()}\n")


def load_mesh(path):
    lines = Path(path).read_text().splitlines()
    head = lines[0].split()
    if head[0] != "vertices" or head[3] != "elements" or head[6] != "facets":
        raise ValueError("not a mesh file")
    nV, nE, nF = int(head[1]), int(head[4]), int(head[7])
    verts = np.array([list(map(float, s.split())) for s in lines[1:1 + nV]])
    elems = np.array([list(map(int, s.split())) for s in lines[1 + nV:1 + nV + nE]])
    rows = [s.split() for s in lines[1 + nV + nE:1 + nV + nE + nF]]
    table = {(int(a), int(b)): FacetTag[t.upper()] for a, b, t in rows}

    def tag(pairs, mid):
        return np.array([table[(int(a), int(b))] for a, b in pairs], dtype=np.int8)

    mesh = mesh_from_arrays(verts, elems, tag)
    if mesh.n_facets != nF:
        raise ValueError("facet count mismatch")
    return mesh
