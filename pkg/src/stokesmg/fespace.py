"""Taylor-Hood Q_k-Q_{k-1} spaces: bases, dof numbering, constraints.

Velocity dofs are stored component-blocked: dof ``c * n_scalar + i`` is
component ``c`` of scalar node ``i``. A full coefficient vector is the
concatenation ``[u, p]`` of length ``n + m``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Optional

import numpy as np

from .mesh import LevelMesh, face_local_nodes, jacobians, number_tensor_nodes, tensor_multi_indices


class UnsupportedDegreeError(ValueError):
    pass


def gauss_legendre(n: int):
    """``n``-point Gauss rule on ``[0, 1]``."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def lagrange_1d(nodes, x):
    """Values and derivatives of the Lagrange polynomials on ``nodes`` at ``x``.

    Returns two arrays of shape ``(len(x), len(nodes))``.
    """
    nodes = np.asarray(nodes, dtype=float)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    n = nodes.size
    vals = np.ones((x.size, n))
    ders = np.zeros((x.size, n))
    for i in range(n):
        others = np.delete(nodes, i)
        denom = np.prod(nodes[i] - others)
        factors = x[:, None] - others[None, :]
        vals[:, i] = np.prod(factors, axis=1) / denom
        for j in range(n - 1):
            ders[:, i] += np.prod(np.delete(factors, j, axis=1), axis=1) / denom
    return vals, ders


@dataclass
class TensorBasis:
    """Tensor-product Lagrange basis of degree ``degree`` on equispaced nodes.

    ``values[q, i]`` and ``derivs[q, i]`` tabulate the 1d shape functions at
    the 1d quadrature points.
    """

    degree: int
    n_quad: int
    nodes: np.ndarray = field(init=False)
    quad_points: np.ndarray = field(init=False)
    quad_weights: np.ndarray = field(init=False)
    values: np.ndarray = field(init=False)
    derivs: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.degree < 1:
            raise UnsupportedDegreeError("basis degree must be >= 1")
        self.nodes = np.linspace(0.0, 1.0, self.degree + 1)
        self.quad_points, self.quad_weights = gauss_legendre(self.n_quad)
        self.values, self.derivs = lagrange_1d(self.nodes, self.quad_points)

    def eval(self, x):
        return lagrange_1d(self.nodes, x)[0]

    def deriv(self, x):
        return lagrange_1d(self.nodes, x)[1]

    def tensor_values(self, points):
        """Values of all ``(degree+1)**d`` tensor shape functions at reference ``points``."""
        points = np.atleast_2d(points)
        dim = points.shape[1]
        idx = tensor_multi_indices(self.degree + 1, dim)
        out = np.ones((points.shape[0], idx.shape[0]))
        for a in range(dim):
            out *= self.eval(points[:, a])[:, idx[:, a]]
        return out

    def reference_nodes(self, dim):
        idx = tensor_multi_indices(self.degree + 1, dim)
        return self.nodes[idx]


@dataclass
class QuadratureGeometry:
    """Per-cell, per-quadrature-point mapping data (tensor order, axis 0 fastest)."""

    points: np.ndarray  # (nc, nq, d) physical points
    JxW: np.ndarray  # (nc, nq)
    Jinv: np.ndarray  # (nc, nq, d, d), Jinv[..., b, a] = dxi_b / dx_a


def quadrature_geometry(mesh: LevelMesh, n_quad: int) -> QuadratureGeometry:
    x1, w1 = gauss_legendre(n_quad)
    idx = tensor_multi_indices(n_quad, mesh.dim)
    pts = x1[idx]
    wts = np.prod(w1[idx], axis=1)
    x, J = jacobians(mesh, pts)
    det = np.linalg.det(J)
    if np.any(det <= 0):
        from .mesh import InvalidGeometryError
        raise InvalidGeometryError("non-positive Jacobian at a quadrature point")
    return QuadratureGeometry(x, det * wts[None, :], np.linalg.inv(J))


@dataclass
class BlockVector:
    u: np.ndarray
    p: np.ndarray

    @classmethod
    def zeros(cls, dofmap: "DofMap"):
        return cls(np.zeros(dofmap.n), np.zeros(dofmap.m))

    @classmethod
    def from_array(cls, x, dofmap: "DofMap"):
        x = np.asarray(x)
        if x.shape != (dofmap.n + dofmap.m,):
            raise ValueError(f"vector of length {x.shape} does not match dofmap ({dofmap.n}+{dofmap.m})")
        return cls(x[: dofmap.n].copy(), x[dofmap.n:].copy())

    def to_array(self):
        return np.concatenate([self.u, self.p])

    def copy(self):
        return BlockVector(self.u.copy(), self.p.copy())


@dataclass
class ConstraintPolicy:
    """The one place that decides how constrained dofs are treated.

    * Dirichlet velocity dofs: corrections and residuals are zero there, so
      operators act as ``Z K Z`` (zero rows/columns) in residual contexts and
      their diagonals are replaced by 1 (identity rows) in smoothing contexts.
    * Pressure mean (pure Dirichlet problems): iterates are projected to zero
      continuous mean with the pressure-basis integrals ``w``; residuals are
      made consistent by removing the mean of their pressure part (the
      constant is the kernel of ``B^T``).
    """

    n: int
    m: int
    fixed: np.ndarray  # bool mask over the full vector
    pressure_weights: np.ndarray
    mean_constrained: bool

    @property
    def free(self):
        return ~self.fixed

    def zero(self, x):
        """Zero the constrained entries of ``x`` (in place; dofs along axis 0)."""
        x[self.fixed] = 0.0
        return x

    def zero_velocity(self, u):
        u[self.fixed[: self.n]] = 0.0
        return u

    def project_primal(self, x):
        if self.mean_constrained:
            w = self.pressure_weights
            p = x[self.n:]
            p -= (w @ p) / w.sum()
        return x

    def project_dual(self, r):
        if self.mean_constrained:
            rp = r[self.n:]
            rp -= rp.mean()
        return r

    def velocity_diag_for_smoothing(self, diag):
        d = np.array(diag, dtype=float)
        d[self.fixed[: self.n]] = 1.0
        return d


@dataclass
class DofMap:
    mesh: LevelMesh
    k: int
    n_scalar: int
    m: int
    l2g_v: np.ndarray
    l2g_p: np.ndarray
    velocity_points: np.ndarray
    pressure_points: np.ndarray
    boundary_nodes: Dict[int, np.ndarray]
    dirichlet_ids: tuple
    dirichlet_nodes: np.ndarray
    pressure_weights: np.ndarray
    pressure_mean_constrained: bool
    basis_v: TensorBasis
    basis_p: TensorBasis
    constraints: Optional[ConstraintPolicy] = None

    @property
    def level(self):
        return self.mesh.level

    @property
    def dim(self):
        return self.mesh.dim

    @property
    def n(self):
        return self.dim * self.n_scalar

    @property
    def size(self):
        return self.n + self.m

    @property
    def dirichlet_dofs(self):
        return (np.arange(self.dim)[:, None] * self.n_scalar + self.dirichlet_nodes[None, :]).ravel()

    @property
    def fixed_mask(self):
        return self.constraints.fixed


def build_dofmap(mesh: LevelMesh, k: int = 2, dirichlet_ids=None, pressure_mean_constrained=None) -> DofMap:
    """Number the Q_k velocity and Q_{k-1} pressure nodes of ``mesh``.

    ``dirichlet_ids`` defaults to every boundary id; the pressure mean is
    constrained by default exactly when the whole boundary is Dirichlet.
    """
    if k < 2:
        raise UnsupportedDegreeError(f"Taylor-Hood needs velocity degree k >= 2, got {k}")
    dim = mesh.dim
    all_ids = tuple(mesh.boundary_ids)
    dirichlet_ids = all_ids if dirichlet_ids is None else tuple(dirichlet_ids)
    if pressure_mean_constrained is None:
        pressure_mean_constrained = set(all_ids) <= set(dirichlet_ids)

    l2g_v, ns, _ = number_tensor_nodes(mesh.cells, dim, k)
    l2g_p, m, _ = number_tensor_nodes(mesh.cells, dim, k - 1)
    basis_v = TensorBasis(k, k + 1)
    basis_p = TensorBasis(k - 1, k + 1)

    def node_points(basis, l2g, count):
        x, _ = jacobians(mesh, basis.reference_nodes(dim))
        pts = np.empty((count, dim))
        pts[l2g.ravel()] = x.reshape(-1, dim)
        return pts

    vpts = node_points(basis_v, l2g_v, ns)
    ppts = node_points(basis_p, l2g_p, m)

    bnodes: Dict[int, list] = {}
    for c, f, b in mesh.boundary_faces:
        bnodes.setdefault(int(b), []).append(l2g_v[c, face_local_nodes(dim, k, int(f))])
    boundary_nodes = {b: np.unique(np.concatenate(v)) for b, v in bnodes.items()}
    dnodes = [boundary_nodes[b] for b in dirichlet_ids if b in boundary_nodes]
    dirichlet_nodes = np.unique(np.concatenate(dnodes)) if dnodes else np.zeros(0, dtype=np.int64)

    geo = quadrature_geometry(mesh, k + 1)
    psi = basis_p.tensor_values(basis_p.quad_points[tensor_multi_indices(k + 1, dim)])
    pw = np.bincount(l2g_p.ravel(), weights=(geo.JxW @ psi).ravel(), minlength=m)

    dm = DofMap(mesh, k, ns, m, l2g_v, l2g_p, vpts, ppts, boundary_nodes, dirichlet_ids,
                dirichlet_nodes, pw, bool(pressure_mean_constrained), basis_v, basis_p)
    fixed = np.zeros(dm.n + m, dtype=bool)
    fixed[dm.dirichlet_dofs] = True
    dm.constraints = ConstraintPolicy(dm.n, m, fixed, pw, dm.pressure_mean_constrained)
    return dm


def apply_dirichlet(dofmap: DofMap, boundary_value_function: Callable, vec):
    """Set constrained velocity entries to the nodal interpolant of the boundary data.

    ``boundary_value_function`` maps points of shape ``(N, d)`` to values of
    shape ``(N, d)``. Accepts a :class:`BlockVector` or a full array and
    returns a new object of the same kind.
    """
    nodes = dofmap.dirichlet_nodes
    vals = np.asarray(boundary_value_function(dofmap.velocity_points[nodes]), dtype=float)
    vals = vals.reshape(nodes.size, dofmap.dim)
    if isinstance(vec, BlockVector):
        out = vec.copy()
        u = out.u
    else:
        out = np.array(vec, dtype=float)
        u = out[: dofmap.n]
    for c in range(dofmap.dim):
        u[c * dofmap.n_scalar + nodes] = vals[:, c]
    return out


def pressure_mean_project(dofmap: DofMap, vec):
    """Remove the constant component so that the pressure has zero integral."""
    w = dofmap.pressure_weights
    if isinstance(vec, BlockVector):
        out = vec.copy()
        out.p -= (w @ out.p) / w.sum()
        return out
    out = np.array(vec, dtype=float)
    p = out[dofmap.n:] if out.size == dofmap.size else out
    p -= (w @ p) / w.sum()
    return out


def interpolate(dofmap: DofMap, velocity=None, pressure=None):
    """Nodal interpolant of callables ``velocity(x) -> (N, d)`` and ``pressure(x) -> (N,)``."""
    x = np.zeros(dofmap.size)
    if velocity is not None:
        vals = np.asarray(velocity(dofmap.velocity_points), dtype=float).reshape(dofmap.n_scalar, dofmap.dim)
        x[: dofmap.n] = vals.T.ravel()
    if pressure is not None:
        x[dofmap.n:] = np.asarray(pressure(dofmap.pressure_points), dtype=float)
    return x


def evaluate(dofmap: DofMap, x, reference_points):
    """Evaluate the FE fields on every cell at ``reference_points``.

    Returns ``(points, u, p)`` with shapes ``(nc, npts, d)``, ``(nc, npts, d)``
    and ``(nc, npts)``.
    """
    ref = np.atleast_2d(reference_points)
    pts, _ = jacobians(dofmap.mesh, ref)
    phi = dofmap.basis_v.tensor_values(ref)
    psi = dofmap.basis_p.tensor_values(ref)
    u = x[: dofmap.n].reshape(dofmap.dim, dofmap.n_scalar)
    uc = np.einsum("qi,dci->cqd", phi, u[:, dofmap.l2g_v])
    pc = np.einsum("qi,ci->cq", psi, x[dofmap.n:][dofmap.l2g_p])
    return pts, uc, pc
