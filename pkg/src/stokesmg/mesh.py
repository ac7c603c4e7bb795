"""Nested quadrilateral / hexahedral mesh hierarchies.

Cells store their ``2**d`` vertices in lexicographic reference order: bit ``a``
of the local vertex index is the reference coordinate ``a`` of that corner.
Local face ``2*a + s`` is the face where reference coordinate ``a`` equals ``s``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from importlib import resources
from typing import Optional, Sequence

import numpy as np


class InvalidGeometryError(ValueError):
    """Raised when a cell map has a non-positive Jacobian determinant."""


@dataclass(frozen=True)
class GeometryDescriptor:
    """Curved-boundary description used during refinement.

    Only ``kind="circle"`` (2d) carries geometry; ``kind="none"`` refines by
    arithmetic means only.
    """

    kind: str = "none"
    center: tuple = (0.0, 0.0)
    radius: float = 0.0
    boundary_ids: tuple = ()

    def __post_init__(self):
        if self.kind not in ("none", "circle"):
            raise ValueError(f"unsupported geometry kind {self.kind!r}")
        if self.kind == "circle" and self.radius <= 0:
            raise ValueError("circle radius must be positive")

    def snap(self, points):
        """Radially project ``points`` onto the circle."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        c = np.asarray(self.center, dtype=float)
        v = pts - c
        r = np.linalg.norm(v, axis=1, keepdims=True)
        return c + self.radius * v / r


NO_GEOMETRY = GeometryDescriptor()

#: Cylinder of the channel benchmark, attached to boundary id 3.
CYLINDER = GeometryDescriptor("circle", (0.2, 0.2), 0.05, (3,))

INFLOW, OUTFLOW, WALL, CYLINDER_ID = 0, 1, 2, 3


@dataclass
class LevelMesh:
    """One level of a nested mesh hierarchy.

    ``child_index[c]`` is the position of cell ``c`` inside its parent, with
    the same bit convention as the vertex numbering.
    """

    level: int
    vertices: np.ndarray
    cells: np.ndarray
    boundary_faces: np.ndarray
    parent_of: Optional[np.ndarray] = None
    children_of: Optional[np.ndarray] = None
    child_index: Optional[np.ndarray] = None
    geometry: GeometryDescriptor = NO_GEOMETRY

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float)
        self.cells = np.asarray(self.cells, dtype=np.int64)
        self.boundary_faces = np.asarray(self.boundary_faces, dtype=np.int64).reshape(-1, 3)

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    @property
    def n_cells(self) -> int:
        return self.cells.shape[0]

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def boundary_ids(self):
        return sorted(set(self.boundary_faces[:, 2].tolist()))

    def cell_diameters(self):
        pts = self.vertices[self.cells]
        return np.max(np.linalg.norm(pts[:, :, None, :] - pts[:, None, :, :], axis=-1), axis=(1, 2))

    def mesh_size(self) -> float:
        return float(self.cell_diameters().max())


# ---------------------------------------------------------------------------
# multilinear maps


def _corner_bits(dim):
    return np.array([[(c >> a) & 1 for a in range(dim)] for c in range(2**dim)])


def multilinear_shape(points):
    """Values and reference gradients of the ``2**d`` multilinear shape functions.

    Returns arrays of shape ``(npts, 2**d)`` and ``(npts, 2**d, d)``.
    """
    xi = np.atleast_2d(np.asarray(points, dtype=float))
    npts, dim = xi.shape
    bits = _corner_bits(dim)
    f = np.where(bits[None, :, :] == 1, xi[:, None, :], 1.0 - xi[:, None, :])
    df = np.where(bits == 1, 1.0, -1.0)
    vals = np.prod(f, axis=2)
    grads = np.empty((npts, 2**dim, dim))
    for b in range(dim):
        others = np.prod(np.delete(f, b, axis=2), axis=2) if dim > 1 else 1.0
        grads[:, :, b] = df[None, :, b] * others
    return vals, grads


def jacobians(mesh: LevelMesh, points, cells=None):
    """Physical points and Jacobians ``J[..., a, b] = dx_a/dxi_b`` of all cells."""
    vals, grads = multilinear_shape(points)
    X = mesh.vertices[mesh.cells if cells is None else mesh.cells[cells]]
    x = np.einsum("cvd,qv->cqd", X, vals)
    J = np.einsum("cvd,qvb->cqdb", X, grads)
    return x, J


def cell_mapping(mesh: LevelMesh, cell: int, reference_points):
    """Evaluate the multilinear map of one cell.

    Returns
    -------
    x : (npts, d) physical points
    J : (npts, d, d) Jacobians
    det : (npts,) determinants
    inv_t : (npts, d, d) inverse-transposed Jacobians
    """
    x, J = jacobians(mesh, reference_points, cells=np.array([cell]))
    x, J = x[0], J[0]
    det = np.linalg.det(J)
    if np.any(det <= 0):
        raise InvalidGeometryError(f"cell {cell}: non-positive Jacobian {det.min():.3e}")
    inv_t = np.linalg.inv(J).transpose(0, 2, 1)
    return x, J, det, inv_t


def check_jacobians(mesh: LevelMesh, n_gauss: int = 3):
    """Raise unless every cell has positive Jacobian at corners and Gauss points."""
    g, _ = np.polynomial.legendre.leggauss(n_gauss)
    g = 0.5 * (g + 1.0)
    pts1 = np.concatenate([[0.0, 1.0], g])
    pts = np.array(list(itertools.product(pts1, repeat=mesh.dim)))[:, ::-1]
    _, J = jacobians(mesh, pts)
    det = np.linalg.det(J)
    if np.any(det <= 0):
        bad = np.unique(np.nonzero(det <= 0)[0])
        raise InvalidGeometryError(
            f"level {mesh.level}: {bad.size} cell(s) with non-positive Jacobian, first {bad[0]}")
    return det.min()


# ---------------------------------------------------------------------------
# tensor-product node numbering (shared by refinement and dof numbering)


def tensor_multi_indices(n1d: int, dim: int):
    """Multi-indices of a tensor grid, lexicographic with axis 0 fastest."""
    return np.array(list(itertools.product(range(n1d), repeat=dim)))[:, ::-1]


def number_tensor_nodes(cells, dim: int, k: int):
    """Globally number the nodes of the degree-``k`` tensor grid on each cell.

    A node is identified by the multilinear weights it gives to the cell's
    vertices, expressed as integers; the key is orientation independent, so
    nodes on shared vertices/edges/faces coincide across cells.

    Returns ``(l2g, n_nodes, weights)`` with ``l2g`` of shape
    ``(n_cells, (k+1)**dim)`` and integer ``weights`` of shape
    ``((k+1)**dim, 2**dim)``.
    """
    cells = np.asarray(cells, dtype=np.int64)
    idx = tensor_multi_indices(k + 1, dim)
    bits = _corner_bits(dim)
    w = np.prod(np.where(bits[None, :, :] == 1, idx[:, None, :], k - idx[:, None, :]), axis=2)
    nc, nl, nv = cells.shape[0], idx.shape[0], bits.shape[0]
    vid = np.broadcast_to(cells[:, None, :], (nc, nl, nv))
    vid = np.where(w[None] > 0, vid, -1)
    ww = np.broadcast_to(w[None], (nc, nl, nv))
    order = np.argsort(vid, axis=2, kind="stable")
    keys = np.concatenate([np.take_along_axis(vid, order, 2),
                           np.take_along_axis(ww, order, 2)], axis=2).reshape(nc * nl, 2 * nv)
    _, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    # renumber in order of first appearance (cell-major) for locality
    rank = np.empty(first.size, dtype=np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(first.size)
    l2g = rank[inverse.reshape(-1)].reshape(nc, nl)
    return l2g, first.size, w


def face_local_nodes(dim: int, k: int, face: int):
    """Local tensor-node indices lying on reference face ``face``."""
    idx = tensor_multi_indices(k + 1, dim)
    a, s = divmod(face, 2)
    return np.nonzero(idx[:, a] == s * k)[0]


# ---------------------------------------------------------------------------
# construction and refinement


def _unit_cell(dim):
    verts = _corner_bits(dim).astype(float)
    cells = np.arange(2**dim)[None, :]
    bfaces = [(0, f, f) for f in range(2 * dim)]
    return LevelMesh(0, verts, cells, bfaces)


def refine_uniform(mesh: LevelMesh, geom: GeometryDescriptor = None) -> LevelMesh:
    """Split every cell into ``2**d`` children.

    New vertices are arithmetic means of their generating vertices; those on
    boundary faces attached to ``geom`` are then projected onto the curve.
    """
    geom = mesh.geometry if geom is None else geom
    dim, nc = mesh.dim, mesh.n_cells
    if geom.kind != "none" and dim != 2:
        raise NotImplementedError("curved boundaries are implemented for 2d meshes only")

    l2g, nnew, w = number_tensor_nodes(mesh.cells, dim, 2)
    pts = np.einsum("lv,cvd->cld", w / float(2**dim), mesh.vertices[mesh.cells])
    verts = np.empty((nnew, dim))
    verts[l2g.reshape(-1)] = pts.reshape(-1, dim)

    if geom.kind != "none":
        on_curve = [l2g[c, face_local_nodes(dim, 2, f)]
                    for c, f, b in mesh.boundary_faces if b in geom.boundary_ids]
        if on_curve:
            snap = np.unique(np.concatenate(on_curve))
            verts[snap] = geom.snap(verts[snap])

    bits = _corner_bits(dim)
    nchild = 2**dim
    strides = 3 ** np.arange(dim)
    children = np.empty((nc * nchild, nchild), dtype=np.int64)
    for j in range(nchild):
        loc = ((bits[j][None, :] + bits) * strides).sum(axis=1)
        children[j::nchild] = l2g[:, loc]

    bf = []
    for c, f, b in mesh.boundary_faces:
        a, s = divmod(int(f), 2)
        for j in range(nchild):
            if bits[j, a] == s:
                bf.append((c * nchild + j, f, b))

    fine = LevelMesh(
        level=mesh.level + 1, vertices=verts, cells=children, boundary_faces=bf,
        parent_of=np.repeat(np.arange(nc), nchild),
        child_index=np.tile(np.arange(nchild), nc), geometry=geom)
    mesh.children_of = np.arange(nc * nchild).reshape(nc, nchild)
    check_jacobians(fine)
    return fine


def build_hierarchy(coarse: LevelMesh, n_refinements: int, geom: GeometryDescriptor = None):
    """Return ``[coarse, refined once, ..., refined n times]``."""
    if geom is not None:
        coarse.geometry = geom
    levels = [coarse]
    for _ in range(n_refinements):
        levels.append(refine_uniform(levels[-1], geom))
    return levels


def make_unit_hypercube(dim: int, initial_refinements: int = 0):
    """Hierarchy starting from the single cell ``(0,1)^dim``.

    Boundary id of face ``2*a + s`` is ``2*a + s`` (so ``3`` is the top of the
    unit square and ``5`` the top of the unit cube).
    """
    if dim not in (2, 3):
        raise ValueError("dim must be 2 or 3")
    if initial_refinements < 0:
        raise ValueError("initial_refinements must be non-negative")
    return build_hierarchy(_unit_cell(dim), initial_refinements)


# ---------------------------------------------------------------------------
# channel with cylinder


def read_mesh_file(stream) -> LevelMesh:
    """Parse the plain-text mesh format (see ``data/README.md``)."""
    lines = [ln.split("#", 1)[0].strip() for ln in stream]
    lines = [ln for ln in lines if ln]
    pos = 0

    def section(name):
        nonlocal pos
        head = lines[pos].split()
        if head[0] != name:
            raise ValueError(f"expected section {name!r}, got {head[0]!r}")
        count = int(head[1])
        rows = [ln.split() for ln in lines[pos + 1: pos + 1 + count]]
        pos += 1 + count
        return rows

    verts = np.array(section("vertices"), dtype=float)
    cells = np.array(section("cells"), dtype=np.int64)
    bfaces = np.array(section("boundary"), dtype=np.int64)
    return LevelMesh(0, verts, cells, bfaces)


def write_mesh_file(mesh: LevelMesh, stream, header: Sequence[str] = ()):
    for h in header:
        stream.write(f"# {h}\n")
    stream.write(f"vertices {mesh.n_vertices}\n")
    for v in mesh.vertices:
        stream.write(" ".join(repr(float(x)) for x in v) + "\n")
    stream.write(f"cells {mesh.n_cells}\n")
    for c in mesh.cells:
        stream.write(" ".join(str(int(i)) for i in c) + "\n")
    stream.write(f"boundary {len(mesh.boundary_faces)}\n")
    for c, f, b in mesh.boundary_faces:
        stream.write(f"{c} {f} {b}\n")


def make_channel_with_cylinder() -> LevelMesh:
    """Coarse mesh of ``(0,2.2)x(0,0.41)`` minus the disk of radius 0.05 at (0.2,0.2).

    Boundary ids: 0 inflow, 1 outflow, 2 walls, 3 cylinder.
    """
    path = resources.files("stokesmg") / "data" / "channel_with_cylinder.txt"
    with path.open("r") as fh:
        mesh = read_mesh_file(fh)
    mesh.geometry = CYLINDER
    check_jacobians(mesh)
    return mesh
