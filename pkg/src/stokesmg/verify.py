"""Assembled-matrix oracles and dense spectral checks for small levels.

Nothing here is used by the solve path except the level-0 matrix for the
coarse direct solver and the optional exact / ``d`` Schur diagonals.
Element matrices are built from full tensor-product tables (no sum
factorization) so they are an independent check of :mod:`.mfoperator`.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .fespace import DofMap, quadrature_geometry
from .mesh import tensor_multi_indices

ASSEMBLY_GUARD = 20_000
SCHUR_GUARD = 5_000


class SizeGuardError(RuntimeError):
    pass


def _guard(size, limit=ASSEMBLY_GUARD):
    if size > limit:
        raise SizeGuardError(f"{size} dofs exceed the dense/assembly guard of {limit}")


def _tables(basis, dim):
    """Tensor values ``(nq, nl)`` and reference gradients ``(nq, nl, d)`` at the Gauss points."""
    nq1 = basis.n_quad
    qidx = tensor_multi_indices(nq1, dim)
    nidx = tensor_multi_indices(basis.degree + 1, dim)
    V, D = basis.values, basis.derivs
    vals = np.ones((qidx.shape[0], nidx.shape[0]))
    grads = np.ones((qidx.shape[0], nidx.shape[0], dim))
    for a in range(dim):
        va = V[qidx[:, a]][:, nidx[:, a]]
        da = D[qidx[:, a]][:, nidx[:, a]]
        vals *= va
        for b in range(dim):
            grads[:, :, b] *= da if a == b else va
    return vals, grads


@dataclass
class AssembledSystem:
    """Sparse blocks of one level.

    ``A``, ``B``, ``M_v`` act on the component-blocked velocity vector.
    ``A_c`` and ``B_c`` carry the residual-context constraint convention:
    rows and columns of Dirichlet velocity dofs are zero.
    """

    dofmap: DofMap
    A: sp.csr_matrix
    B: sp.csr_matrix
    M_p: sp.csr_matrix
    M_v: sp.csr_matrix
    K_p: sp.csr_matrix
    A_c: sp.csr_matrix
    B_c: sp.csr_matrix

    def K(self, constrained=True):
        A, B = (self.A_c, self.B_c) if constrained else (self.A, self.B)
        return sp.bmat([[A, B.T], [B, None]], format="csr")

    def K_identity_rows(self):
        """``Z K Z`` plus identity on the constrained velocity rows."""
        fixed = self.dofmap.constraints.fixed.astype(float)
        return (self.K(True) + sp.diags(fixed)).tocsr()


def assemble(dofmap: DofMap, mu=1.0, gamma_rho=0.0, guard=ASSEMBLY_GUARD) -> AssembledSystem:
    _guard(dofmap.size, guard)
    dim = dofmap.dim
    geo = quadrature_geometry(dofmap.mesh, dofmap.k + 1)
    phi, dphi = _tables(dofmap.basis_v, dim)
    psi, dpsi = _tables(dofmap.basis_p, dim)
    # physical gradients: grad_x phi = J^{-T} grad_xi phi
    gphi = np.einsum("eqba,qib->eqia", geo.Jinv, dphi)
    gpsi = np.einsum("eqba,qib->eqia", geo.Jinv, dpsi)
    W = geo.JxW

    lap = np.einsum("eq,eqia,eqja->eij", W, gphi, gphi)
    mass_v = np.einsum("eq,qi,qj->eij", W, phi, phi)
    mass_p = np.einsum("eq,qi,qj->eij", W, psi, psi)
    lap_p = np.einsum("eq,eqia,eqja->eij", W, gpsi, gpsi)
    # b(u, q) = (q, div u); component c block: (psi_i, d phi_j / dx_c)
    div = np.einsum("eq,qi,eqjc->ecij", W, psi, gphi)

    ns, m = dofmap.n_scalar, dofmap.m
    lv, lp = dofmap.l2g_v, dofmap.l2g_p

    def scalar(loc, rows, cols, shape):
        r = np.broadcast_to(rows[:, :, None], loc.shape)
        c = np.broadcast_to(cols[:, None, :], loc.shape)
        return sp.csr_matrix((loc.ravel(), (r.ravel(), c.ravel())), shape=shape)

    A1 = scalar(mu * lap + gamma_rho * mass_v, lv, lv, (ns, ns))
    Mv1 = scalar(mass_v, lv, lv, (ns, ns))
    A = sp.block_diag([A1] * dim, format="csr")
    M_v = sp.block_diag([Mv1] * dim, format="csr")
    B = sp.hstack([scalar(div[:, c], lp, lv, (m, ns)) for c in range(dim)], format="csr")
    M_p = scalar(mass_p, lp, lp, (m, m))
    K_p = scalar(lap_p, lp, lp, (m, m))

    Z = sp.diags((~dofmap.constraints.fixed[: dofmap.n]).astype(float))
    return AssembledSystem(dofmap, A, B, M_p, M_v, K_p, (Z @ A @ Z).tocsr(), (B @ Z).tocsr())


def exact_schur_diag(op, Ainv, guard=SCHUR_GUARD):
    """``diag(B A_hat^{-1} B^T)`` column by column (``m`` applications)."""
    _guard(op.m, guard)
    out = np.empty(op.m)
    e = np.zeros(op.m)
    for i in range(op.m):
        e[i] = 1.0
        out[i] = op.apply_B(Ainv(op.apply_Bt(e)))[i]
        e[i] = 0.0
    return out


def diag_Sd(system: AssembledSystem):
    """``sum_j B_ij^2 / A_jj`` over free velocity dofs, from the assembled ``B``."""
    dA = system.A.diagonal()
    free = ~system.dofmap.constraints.fixed[: system.dofmap.n]
    if np.any(dA[free] <= 0):
        raise ArithmeticError("non-positive diagonal entry of A")
    inv = np.where(free, 1.0 / np.where(free, dA, 1.0), 0.0)
    return np.asarray(system.B_c.multiply(system.B_c) @ inv).ravel()


# ---------------------------------------------------------------------------
# dense restrictions to the free dofs


def free_velocity(dofmap):
    return np.flatnonzero(~dofmap.constraints.fixed[: dofmap.n])


def _sym(M):
    return 0.5 * (M + M.T)


def dense_apply(fn, n):
    """Columns ``fn(e_i)`` of a linear map on ``R^n``."""
    return np.column_stack([fn(e) for e in np.eye(n)])


@dataclass
class DenseUzawa:
    """Dense blocks of one smoother on the free dofs (velocity part first)."""

    A: np.ndarray
    B: np.ndarray
    Ainv: np.ndarray
    St: np.ndarray
    Sinv: np.ndarray

    @property
    def Ahat(self):
        return _sym(np.linalg.inv(self.Ainv))

    @property
    def Shat(self):
        return _sym(np.linalg.inv(self.Sinv))

    @property
    def K(self):
        return np.block([[self.A, self.B.T], [self.B, np.zeros((self.B.shape[0],) * 2)]])

    @property
    def Khat(self):
        return np.block([[self.Ahat, self.B.T], [self.B, self.St - self.Shat]])

    @property
    def Khat_inv(self):
        """Block inverse of ``K_hat`` written with ``A_hat^{-1}`` and ``S_hat^{-1}`` only."""
        Ai, Si, B = self.Ainv, self.Sinv, self.B
        AB = Ai @ B.T
        return np.block([[Ai - AB @ Si @ AB.T, AB @ Si], [Si @ AB.T, -Si]])

    @property
    def iteration_matrix(self):
        return np.eye(self.K.shape[0]) - self.Khat_inv @ self.K


def dense_uzawa(sm, system: AssembledSystem) -> DenseUzawa:
    from dataclasses import replace
    from .smoother import chebyshev_apply

    dm = system.dofmap
    _guard(dm.size)
    fu = free_velocity(dm)
    A_full = system.A_c.toarray()
    Ainv = chebyshev_apply(replace(sm.cheb_A, M=lambda X: A_full @ X), np.eye(dm.n))
    Ainv = _sym(Ainv[np.ix_(fu, fu)])
    B = system.B_c.toarray()[:, fu]
    St = _sym(B @ Ainv @ B.T)
    Sinv = _sym(chebyshev_apply(replace(sm.cheb_S, M=lambda X: St @ X), np.eye(dm.m)))
    return DenseUzawa(A_full[np.ix_(fu, fu)], B, Ainv, St, Sinv)


def check_spectral_inequalities(sm, system: AssembledSystem, rtol=1e-8):
    """Smallest eigenvalues of ``A_hat - A`` and ``S_hat - S_tilde``."""
    dz = dense_uzawa(sm, system)
    lam_A = np.linalg.eigvalsh(dz.A)
    lam_St = np.linalg.eigvalsh(dz.St)
    min_A = np.linalg.eigvalsh(dz.Ahat - dz.A)[0]
    min_S = np.linalg.eigvalsh(dz.Shat - dz.St)[0]
    return {
        "lambda_min_Ahat_minus_A": min_A,
        "lambda_max_A": lam_A[-1],
        "lambda_min_Shat_minus_S": min_S,
        "lambda_max_S": lam_St[-1],
        "A_ok": bool(min_A >= -rtol * lam_A[-1]),
        "S_ok": bool(min_S >= -rtol * lam_St[-1]),
    }


# ---------------------------------------------------------------------------
# mesh-dependent norms


@dataclass(frozen=True)
class NormPair:
    """Weights of ``|(v, q)|_X^2 = h^(d-2) |v|^2 + h^d |q|^2``."""

    h: float
    dim: int

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("mesh size must be positive")

    @property
    def weights(self):
        return self.h ** (self.dim - 2), self.h**self.dim

    def vector(self, n, m):
        wv, wp = self.weights
        return np.concatenate([np.full(n, wv), np.full(m, wp)])


def norm_pair(dofmap) -> NormPair:
    return NormPair(dofmap.mesh.mesh_size(), dofmap.dim)


def xnorm(dofmap, x):
    wv, wp = norm_pair(dofmap).weights
    x = np.asarray(x if not hasattr(x, "to_array") else x.to_array())
    return float(np.sqrt(wv * x[: dofmap.n] @ x[: dofmap.n] + wp * x[dofmap.n:] @ x[dofmap.n:]))


def dual_xnorm(dofmap, f):
    wv, wp = norm_pair(dofmap).weights
    f = np.asarray(f if not hasattr(f, "to_array") else f.to_array())
    return float(np.sqrt(f[: dofmap.n] @ f[: dofmap.n] / wv + f[dofmap.n:] @ f[dofmap.n:] / wp))


def _free_weights(dofmap):
    fu = free_velocity(dofmap)
    return norm_pair(dofmap).vector(fu.size, dofmap.m)


def fe_norm(system: AssembledSystem, x):
    """``(|v|_0^2 + |q|_0^2)^(1/2)`` from the assembled mass matrices."""
    n = system.dofmap.n
    return float(np.sqrt(x[:n] @ (system.M_v @ x[:n]) + x[n:] @ (system.M_p @ x[n:])))


# ---------------------------------------------------------------------------
# smoothing and approximation properties


def measure_smoothing_property(sm, system: AssembledSystem, m_list):
    """Rows ``{m, norm_KSm, eta0, ratio}`` with ``|K S^m|`` in ``L(X, X*)``.

    Also returns ``|K_hat - K|`` in the same norm.
    """
    from .smoother import eta0

    dz = dense_uzawa(sm, system)
    w = np.sqrt(_free_weights(system.dofmap))
    K = dz.K
    S = dz.iteration_matrix
    scaled = lambda M: np.linalg.norm(M / w[:, None] / w[None, :], 2)
    rows = []
    for m in m_list:
        nrm = scaled(K @ np.linalg.matrix_power(S, m))
        e = eta0(m - 1) if m >= 1 else float("nan")
        rows.append({"m": m, "norm_KSm": nrm, "eta0": e, "ratio": nrm / e if m >= 1 else float("nan")})
    return rows, scaled(dz.Khat - K)


def fit_loglog_slope(xs, ys):
    return float(np.polyfit(np.log(xs), np.log(ys), 1)[0])


def pseudo_inverse(system: AssembledSystem):
    """Dense solution operator of ``K`` on the free dofs.

    With a constrained mean the pressure right-hand side is made to sum to
    zero and the result is shifted to zero continuous mean.
    """
    dm = system.dofmap
    fu = free_velocity(dm)
    K = system.K(True).toarray()
    idx = np.concatenate([fu, dm.n + np.arange(dm.m)])
    K = K[np.ix_(idx, idx)]
    N = K.shape[0]
    if not dm.constraints.mean_constrained:
        return np.linalg.inv(K)
    w = dm.pressure_weights
    e = np.concatenate([np.zeros(fu.size), w])
    one = np.concatenate([np.zeros(fu.size), np.ones(dm.m)])
    inv = np.linalg.inv(K + np.abs(np.diag(K)).max() / (e @ e) * np.outer(e, e))
    Pp = np.eye(N) - np.outer(one, e) / w.sum()
    Pd = np.eye(N) - np.outer(one, one) / dm.m
    return Pp @ inv @ Pd


def dense_prolongation(transfer):
    """Prolongation restricted to free dofs, shape ``(fine free, coarse free)``."""
    c, f = transfer.coarse, transfer.fine
    ic = np.concatenate([free_velocity(c), c.n + np.arange(c.m)])
    jf = np.concatenate([free_velocity(f), f.n + np.arange(f.m)])
    cols = []
    for i in ic:
        e = np.zeros(c.size)
        e[i] = 1.0
        cols.append(transfer.prolongate(e)[jf])
    return np.column_stack(cols)


def approximation_norm(fine: AssembledSystem, coarse: AssembledSystem = None, P=None):
    """``|K_l^{-1} - P K_{l-1}^{-1} R|`` in ``L(X*, X)`` on the fine level."""
    Kf = pseudo_inverse(fine)
    Kc = Kf if coarse is None else pseudo_inverse(coarse)
    if P is None:
        P = np.eye(Kf.shape[0])
    C = Kf - P @ Kc @ P.T
    w = np.sqrt(_free_weights(fine.dofmap))
    return float(np.linalg.norm(w[:, None] * C * w[None, :], 2))


def measure_approximation_property(hierarchy, guard=ASSEMBLY_GUARD):
    """One row per level pair ``(l-1, l)`` of a multigrid hierarchy."""
    systems = [assemble(op.dofmap, op.mu, op.gamma_rho, guard) for op in hierarchy.operators]
    rows = []
    for l in range(1, len(systems)):
        P = dense_prolongation(hierarchy.transfers[l])
        rows.append({"level": l, "dofs": systems[l].dofmap.size,
                     "norm": approximation_norm(systems[l], systems[l - 1], P)})
    return rows


# ---------------------------------------------------------------------------
# inf-sup constants


def _deflate_constant(m):
    """Orthonormal basis of the complement of the constant vector."""
    Q, _ = np.linalg.qr(np.column_stack([np.ones(m), np.eye(m)[:, : m - 1]]))
    return Q[:, 1:]


def _smallest_geig(G, K):
    Q = _deflate_constant(G.shape[0])
    return float(sla.eigh(_sym(Q.T @ G @ Q), _sym(Q.T @ K @ Q), eigvals_only=True)[0])


@dataclass
class InfSupReport:
    lbb: float
    bercovier_pironneau: float
    elementwise: np.ndarray

    @property
    def elementwise_min(self):
        return float(self.elementwise.min())


def check_infsup(dofmap, guard=ASSEMBLY_GUARD) -> InfSupReport:
    """Discrete LBB constant, global and per-cell Bercovier-Pironneau constants.

    * LBB: square root of the smallest eigenvalue of
      ``B A_1^{-1} B^T q = lambda M_p q`` (``A_1`` the H^1 Gram matrix of the
      free velocity dofs), on the zero-mean complement when the mean is
      constrained.
    * Bercovier-Pironneau: square root of the smallest eigenvalue of
      ``B M_v^{-1} B^T q = lambda K_p q`` with constants deflated.
    * Per cell: the same with element matrices, velocity dofs on the
      Dirichlet boundary removed.
    """
    sysm = assemble(dofmap, 1.0, 0.0, guard)
    fu = free_velocity(dofmap)
    B = sysm.B.toarray()[:, fu]
    # H^1 Gram: gradient plus mass
    H1 = (sysm.A + sysm.M_v).toarray()[np.ix_(fu, fu)]
    Mp, Kp = sysm.M_p.toarray(), sysm.K_p.toarray()
    G1 = _sym(B @ np.linalg.solve(H1, B.T))
    if dofmap.constraints.mean_constrained:
        lbb = _smallest_geig(G1, Mp)
    else:
        lbb = float(sla.eigh(G1, Mp, eigvals_only=True)[0])
    Mv = sysm.M_v.toarray()[np.ix_(fu, fu)]
    bp = _smallest_geig(_sym(B @ np.linalg.solve(Mv, B.T)), Kp)
    return InfSupReport(float(np.sqrt(max(lbb, 0.0))), float(np.sqrt(max(bp, 0.0))),
                        elementwise_bercovier_pironneau(dofmap))


def elementwise_bercovier_pironneau(dofmap):
    """Per-cell ``c_tau`` with ``B_tau M_tau^{-1} B_tau^T >= c_tau^2 K_{p,tau}``."""
    dim = dofmap.dim
    geo = quadrature_geometry(dofmap.mesh, dofmap.k + 1)
    phi, dphi = _tables(dofmap.basis_v, dim)
    psi, dpsi = _tables(dofmap.basis_p, dim)
    gphi = np.einsum("eqba,qib->eqia", geo.Jinv, dphi)
    gpsi = np.einsum("eqba,qib->eqia", geo.Jinv, dpsi)
    W = geo.JxW
    mass = np.einsum("eq,qi,qj->eij", W, phi, phi)
    lap_p = np.einsum("eq,eqia,eqja->eij", W, gpsi, gpsi)
    div = np.einsum("eq,qi,eqjc->eicj", W, psi, gphi)
    fixed = dofmap.constraints.fixed[: dofmap.n].reshape(dim, dofmap.n_scalar)
    out = np.empty(dofmap.mesh.n_cells)
    for e in range(out.size):
        loc_free = ~fixed[:, dofmap.l2g_v[e]]  # (dim, nl)
        Be = div[e].reshape(div.shape[1], -1)[:, loc_free.ravel()]
        Me = np.kron(np.eye(dim), mass[e])[np.ix_(loc_free.ravel(), loc_free.ravel())]
        G = Be @ np.linalg.solve(Me, Be.T)
        out[e] = np.sqrt(max(_smallest_geig(_sym(G), lap_p[e]), 0.0))
    return out


def write_report(rows, path):
    """CSV with one row per entry of ``rows`` (a list of dicts with equal keys)."""
    rows = list(rows)
    with open(path, "w", newline="") as fh:
        if not rows:
            return
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
