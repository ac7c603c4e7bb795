"""Monolithic geometric multigrid for the Stokes saddle-point system."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence

import numpy as np
import scipy.linalg as sla

from .fespace import DofMap, build_dofmap
from .mesh import LevelMesh, _corner_bits
from .mfoperator import StokesOperator, tensor_contract
from .smoother import SetupError, UzawaSmoother, setup_uzawa
from . import verify


def embedding_matrices(degree):
    """1d tables ``E_s[i, j] = phi_j((s + x_i) / 2)`` for the two children ``s = 0, 1``."""
    from .fespace import lagrange_1d

    nodes = np.linspace(0.0, 1.0, degree + 1)
    return [lagrange_1d(nodes, (s + nodes) / 2.0)[0] for s in (0, 1)]


class _FieldTransfer:
    """Parent-to-child interpolation of one scalar continuous field."""

    def __init__(self, coarse_l2g, fine_l2g, n_fine, fine_mesh: LevelMesh, degree):
        dim = fine_mesh.dim
        self.dim, self.n1 = dim, degree + 1
        E = embedding_matrices(degree)
        bits = _corner_bits(dim)
        self.groups = []
        for j in range(2**dim):
            cells = np.flatnonzero(fine_mesh.child_index == j)
            mats = [E[bits[j, a]] for a in range(dim)]
            self.groups.append((coarse_l2g[fine_mesh.parent_of[cells]], fine_l2g[cells], mats))
        self.n_fine = n_fine
        self.n_coarse = int(coarse_l2g.max()) + 1
        self.inv_valence = 1.0 / np.bincount(fine_l2g.ravel(), minlength=n_fine)

    def _shape(self, a):
        return a.reshape((a.shape[0],) + (self.n1,) * self.dim)

    def prolongate(self, xc):
        out = np.zeros(self.n_fine)
        for cidx, fidx, mats in self.groups:
            loc = tensor_contract(self._shape(xc[cidx]), mats, self.dim).reshape(cidx.shape)
            out += np.bincount(fidx.ravel(), weights=loc.ravel(), minlength=self.n_fine)
        return out * self.inv_valence

    def restrict(self, yf):
        yf = yf * self.inv_valence
        out = np.zeros(self.n_coarse)
        for cidx, fidx, mats in self.groups:
            loc = tensor_contract(self._shape(yf[fidx]), [M.T for M in mats], self.dim).reshape(cidx.shape)
            out += np.bincount(cidx.ravel(), weights=loc.ravel(), minlength=self.n_coarse)
        return out


class Transfer:
    """Canonical injection ``V_{l-1} x Q_{l-1} -> V_l x Q_l`` and its transpose.

    Constrained velocity dofs are zeroed on both sides, so the implemented
    pair is ``P = Z_f I Z_c`` and ``R = P^T``.
    """

    def __init__(self, coarse: DofMap, fine: DofMap):
        self.coarse, self.fine = coarse, fine
        k = fine.k
        self.vel = _FieldTransfer(coarse.l2g_v, fine.l2g_v, fine.n_scalar, fine.mesh, k)
        self.pre = _FieldTransfer(coarse.l2g_p, fine.l2g_p, fine.m, fine.mesh, k - 1)

    def prolongate(self, xc):
        c, f = self.coarse, self.fine
        xc = np.array(xc, dtype=float)
        xc[c.constraints.fixed] = 0.0
        uc = xc[: c.n].reshape(c.dim, c.n_scalar)
        out = np.empty(f.size)
        out[: f.n] = np.concatenate([self.vel.prolongate(u) for u in uc])
        out[f.n:] = self.pre.prolongate(xc[c.n:])
        out[f.constraints.fixed] = 0.0
        return out

    def restrict(self, yf):
        c, f = self.coarse, self.fine
        yf = np.array(yf, dtype=float)
        yf[f.constraints.fixed] = 0.0
        uf = yf[: f.n].reshape(f.dim, f.n_scalar)
        out = np.empty(c.size)
        out[: c.n] = np.concatenate([self.vel.restrict(u) for u in uf])
        out[c.n:] = self.pre.restrict(yf[f.n:])
        out[c.constraints.fixed] = 0.0
        return out


class CoarseSolver:
    """Dense LU of the assembled level-0 matrix.

    Constrained velocity rows are identity rows. With a constrained pressure
    mean the matrix is singular, so ``s * e e^T`` with ``e = (0, w)`` is added;
    consistent right-hand sides then yield the zero-mean solution.
    """

    def __init__(self, op: StokesOperator):
        self.op = op
        dm = op.dofmap
        K = verify.assemble(dm, op.mu, op.gamma_rho).K_identity_rows().toarray()
        cons = dm.constraints
        if cons.mean_constrained:
            e = np.zeros(dm.size)
            e[dm.n:] = cons.pressure_weights
            s = np.abs(np.diag(K)).max() / (e @ e)
            K += s * np.outer(e, e)
        self.matrix = K
        self.lu = sla.lu_factor(K)
        piv = np.abs(np.diag(self.lu[0]))
        if not np.all(np.isfinite(piv)) or piv.min() < 1e-14 * piv.max():
            raise SetupError("coarse factorization is singular")

    def __call__(self, r):
        cons = self.op.constraints
        r = np.array(r, dtype=float)
        cons.zero(r)
        cons.project_dual(r)
        x = sla.lu_solve(self.lu, r)
        cons.zero(x)
        return cons.project_primal(x)


@dataclass
class SolveResult:
    x: np.ndarray
    residuals: List[float]
    iteration_times: List[float]
    status: str  # converged | max-iter | diverged

    @property
    def iterations(self):
        return len(self.residuals) - 1


@dataclass
class Hierarchy:
    """Levels ``0..L`` with operators, smoothers, transfers and the coarse solver."""

    dofmaps: List[DofMap]
    operators: List[StokesOperator]
    smoothers: List[Optional[UzawaSmoother]]
    transfers: List[Optional[Transfer]]
    coarse: CoarseSolver
    cycle_index: int = 2
    steps: int = 2
    calls: List[int] = field(default_factory=list)

    @property
    def L(self):
        return len(self.dofmaps) - 1

    @property
    def finest(self):
        return self.operators[-1]

    def reset_counters(self):
        self.calls = [0] * (self.L + 1)


def build_hierarchy(meshes: Sequence[LevelMesh], k_A=1, k_S=1, steps=2, cycle="W", diag="loc",
                    mu=1.0, gamma_rho=0.0, degree=2, dirichlet_ids=None,
                    pressure_mean_constrained=None) -> Hierarchy:
    """Set up every level of ``meshes`` (coarsest first)."""
    if cycle not in ("V", "W"):
        raise ValueError("cycle must be 'V' or 'W'")
    dms = [build_dofmap(m, degree, dirichlet_ids, pressure_mean_constrained) for m in meshes]
    ops = [StokesOperator(dm, mu, gamma_rho) for dm in dms]
    smoothers = [None] + [setup_uzawa(op, k_A, k_S, diag) for op in ops[1:]]
    transfers = [None] + [Transfer(dms[i - 1], dms[i]) for i in range(1, len(dms))]
    h = Hierarchy(dms, ops, smoothers, transfers, CoarseSolver(ops[0]),
                  cycle_index=1 if cycle == "V" else 2, steps=steps)
    h.reset_counters()
    return h


def with_smoothers(h: Hierarchy, k_A, k_S, diag="loc") -> Hierarchy:
    """Copy of ``h`` sharing levels, transfers and coarse solver, with new smoothers."""
    sm = [None] + [setup_uzawa(op, k_A, k_S, diag) for op in h.operators[1:]]
    return replace(h, smoothers=sm, calls=[0] * (h.L + 1))


def residual(op: StokesOperator, x, b):
    r = b - op.apply_K(x)
    op.constraints.zero(r)
    return op.constraints.project_dual(r)


def mg_cycle(h: Hierarchy, level: int, x, b):
    """One cycle on ``level``: pre-smooth, coarse-grid correction, post-smooth."""
    h.calls[level] += 1
    if level == 0:
        return h.coarse(b)
    sm, op, tr = h.smoothers[level], h.operators[level], h.transfers[level]
    for _ in range(h.steps):
        x = sm.step(x, b)
    rc = tr.restrict(residual(op, x, b))
    ec = np.zeros_like(rc)
    for _ in range(h.cycle_index):
        ec = mg_cycle(h, level - 1, ec, rc)
    x = x + tr.prolongate(ec)
    for _ in range(h.steps):
        x = sm.step(x, b)
    return x


def solve(h: Hierarchy, b, tol=1e-10, max_iter=15, divergence_factor=10.0, divergence_count=3):
    """Repeat cycles from ``x = 0`` until ``|r_j| <= tol |r_0|`` or ``max_iter``.

    Divergence (``divergence_count`` consecutive growths by more than
    ``divergence_factor`` or a non-finite residual) ends the loop early with
    status ``"diverged"``.
    """
    op = h.finest
    cons = op.constraints
    b = np.array(b, dtype=float)
    cons.zero(b)
    cons.project_dual(b)
    x = np.zeros(op.dofmap.size)
    hist = [float(np.linalg.norm(b))]
    times: List[float] = []
    status, growth = "max-iter", 0
    for _ in range(max_iter):
        t0 = time.perf_counter()
        x = mg_cycle(h, h.L, x, b)
        cons.project_primal(x)
        r = float(np.linalg.norm(residual(op, x, b)))
        times.append(time.perf_counter() - t0)
        hist.append(r)
        if not np.isfinite(r):
            status = "diverged"
            break
        growth = growth + 1 if r > divergence_factor * hist[-2] else 0
        if growth >= divergence_count:
            status = "diverged"
            break
        if r <= tol * hist[0]:
            status = "converged"
            break
    return SolveResult(x, hist, times, status)
