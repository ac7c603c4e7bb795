"""Matrix-free Stokes operator.

Every block is applied cell by cell, vectorized over all cells of a level:
gather local coefficients through the local-to-global maps, evaluate values
and reference gradients at the ``(k+1)**d`` Gauss points by 1d contractions
along one reference direction at a time (sum factorization), apply the stored
geometric factors, contract back with the transposed 1d tables and
scatter-add. No element or global matrix is formed.
"""

from __future__ import annotations

import numpy as np

from .fespace import DofMap, quadrature_geometry


class DimensionError(ValueError):
    pass


class SingularDiagonalError(ArithmeticError):
    pass


def tensor_contract(u, mats, dim):
    """Apply ``mats[a]`` (shape ``(n_out, n_in)``) along reference direction ``a``.

    ``u`` has shape ``(B, n_{d-1}, ..., n_0)``: reference direction 0 is the
    last (fastest) axis, matching the lexicographic node and quadrature order.
    """
    for a, M in enumerate(mats):
        ax = dim - a
        u = np.moveaxis(np.tensordot(u, M, axes=([ax], [1])), -1, ax)
    return u


class StokesOperator:
    """Action of ``K = [[A, B^T], [B, 0]]`` on one level.

    ``a(u, v) = mu (grad u, grad v) + gamma_rho (u, v)`` and
    ``b(u, q) = (q, div u)``.
    """

    def __init__(self, dofmap: DofMap, mu: float = 1.0, gamma_rho: float = 0.0):
        self.dofmap = dofmap
        self.mu = float(mu)
        self.gamma_rho = float(gamma_rho)
        self.dim = d = dofmap.dim
        self.n, self.m = dofmap.n, dofmap.m
        k = dofmap.k
        self.nv1, self.np1, self.nq1 = k + 1, k, k + 1
        self.V, self.Dv = dofmap.basis_v.values, dofmap.basis_v.derivs
        self.Vp = dofmap.basis_p.values

        geo = quadrature_geometry(dofmap.mesh, k + 1)
        self.JxW = geo.JxW
        Jinv = geo.Jinv
        # stiffness metric  JxW * J^{-1} J^{-T}  and divergence factors  JxW * J^{-1}
        self.G = np.einsum("eqac,eqbc->eqab", Jinv, Jinv) * geo.JxW[..., None, None]
        self.JinvW = Jinv * geo.JxW[..., None, None]
        self.quad_points = geo.points

        nc = dofmap.mesh.n_cells
        self.n_cells = nc
        offs = (np.arange(d) * dofmap.n_scalar)[:, None, None]
        self._vidx = (dofmap.l2g_v[None] + offs).reshape(-1)
        self._pidx = dofmap.l2g_p.reshape(-1)
        self.constraints = dofmap.constraints
        self._fixed_u = self.constraints.fixed[: self.n]

    # -- 1d kernels -------------------------------------------------------

    def _shape(self, loc, n1):
        return loc.reshape((loc.shape[0],) + (n1,) * self.dim)

    def _values(self, loc, tab):
        n1 = tab.shape[1]
        out = tensor_contract(self._shape(loc, n1), [tab] * self.dim, self.dim)
        return out.reshape(loc.shape[0], -1)

    def _values_T(self, vals, tab):
        out = tensor_contract(self._shape(vals, self.nq1), [tab.T] * self.dim, self.dim)
        return out.reshape(vals.shape[0], -1)

    def _grads(self, loc):
        """Reference gradients, shape ``(B, d, nq)``."""
        d = self.dim
        u = self._shape(loc, self.nv1)
        g = [tensor_contract(u, [self.Dv if a == b else self.V for a in range(d)], d)
             for b in range(d)]
        return np.stack([x.reshape(loc.shape[0], -1) for x in g], axis=1)

    def _grads_T(self, flux):
        d = self.dim
        out = 0.0
        for b in range(d):
            f = self._shape(flux[:, b], self.nq1)
            out = out + tensor_contract(f, [(self.Dv if a == b else self.V).T for a in range(d)], d)
        return out.reshape(flux.shape[0], -1)

    # -- gather / scatter --------------------------------------------------

    def _check(self, x, size):
        x = np.asarray(x, dtype=float)
        if x.shape != (size,):
            raise DimensionError(f"expected a vector of length {size}, got shape {x.shape}")
        return x

    def _gather_u(self, u):
        return u[self._vidx].reshape(self.dim * self.n_cells, -1)

    def _scatter_u(self, loc):
        return np.bincount(self._vidx, weights=loc.reshape(-1), minlength=self.n)

    def _gather_p(self, p):
        return p[self._pidx].reshape(self.n_cells, -1)

    def _scatter_p(self, loc):
        return np.bincount(self._pidx, weights=loc.reshape(-1), minlength=self.m)

    # -- element-level actions ---------------------------------------------

    def _local_A(self, U):
        """Vector-Laplacian (+ mass) kernel on stacked local arrays ``(d*nc, nl)``."""
        nc, d = self.n_cells, self.dim
        g = self._grads(U).reshape(-1, nc, d, self.nq1**d)
        flux = self.mu * np.einsum("eqab,cebq->ceaq", self.G, g)
        out = self._grads_T(flux.reshape(-1, d, self.nq1**d))
        if self.gamma_rho:
            vals = self._values(U, self.V).reshape(-1, nc, self.nq1**d) * self.JxW
            out = out + self.gamma_rho * self._values_T(vals.reshape(-1, self.nq1**d), self.V)
        return out

    def _local_div(self, g):
        """Weighted divergence at quadrature points from stacked reference gradients."""
        nc, d = self.n_cells, self.dim
        g = g.reshape(d, nc, d, -1)
        return np.einsum("eqbc,cebq->eq", self.JinvW, g)

    def _local_Bt(self, P):
        nc, d = self.n_cells, self.dim
        pv = self._values(P, self.Vp)
        flux = np.einsum("eqbc,eq->cebq", self.JinvW, pv)
        return self._grads_T(flux.reshape(d * nc, d, -1))

    # -- public block actions ----------------------------------------------

    def _homog_u(self, u, constrained):
        if constrained:
            u = u.copy()
            u[self._fixed_u] = 0.0
        return u

    def apply_A(self, u, constrained=True):
        u = self._homog_u(self._check(u, self.n), constrained)
        y = self._scatter_u(self._local_A(self._gather_u(u)))
        if constrained:
            y[self._fixed_u] = 0.0
        return y

    def apply_B(self, u, constrained=True):
        u = self._homog_u(self._check(u, self.n), constrained)
        div = self._local_div(self._grads(self._gather_u(u)))
        return self._scatter_p(self._values_T(div, self.Vp))

    def apply_Bt(self, p, constrained=True):
        p = self._check(p, self.m)
        y = self._scatter_u(self._local_Bt(self._gather_p(p)))
        if constrained:
            y[self._fixed_u] = 0.0
        return y

    def apply_Mp(self, p):
        p = self._check(p, self.m)
        vals = self._values(self._gather_p(p), self.Vp) * self.JxW
        return self._scatter_p(self._values_T(vals, self.Vp))

    def apply_Mv(self, u, constrained=False):
        u = self._homog_u(self._check(u, self.n), constrained)
        U = self._gather_u(u)
        vals = (self._values(U, self.V).reshape(self.dim, self.n_cells, -1) * self.JxW)
        y = self._scatter_u(self._values_T(vals.reshape(U.shape[0], -1), self.V))
        if constrained:
            y[self._fixed_u] = 0.0
        return y

    def apply_K(self, x, constrained=True):
        """``[A u + B^T p, B u]``; with ``constrained`` the Dirichlet rows and
        columns are zero (residual convention)."""
        from .fespace import BlockVector
        if isinstance(x, BlockVector):
            y = self.apply_K(x.to_array(), constrained)
            return BlockVector(y[: self.n], y[self.n:])
        x = self._check(x, self.n + self.m)
        u = self._homog_u(x[: self.n], constrained)
        U = self._gather_u(u)
        g = self._grads(U)
        nc, d, nq = self.n_cells, self.dim, self.nq1**self.dim
        flux = self.mu * np.einsum("eqab,cebq->ceaq", self.G, g.reshape(d, nc, d, nq))
        pv = self._values(self._gather_p(x[self.n:]), self.Vp)
        flux += np.einsum("eqbc,eq->cebq", self.JinvW, pv)
        loc = self._grads_T(flux.reshape(d * nc, d, nq))
        if self.gamma_rho:
            vals = self._values(U, self.V).reshape(d, nc, nq) * self.JxW
            loc = loc + self.gamma_rho * self._values_T(vals.reshape(d * nc, nq), self.V)
        y = np.empty(self.n + self.m)
        y[: self.n] = self._scatter_u(loc)
        y[self.n:] = self._scatter_p(self._values_T(self._local_div(g), self.Vp))
        if constrained:
            y[: self.n][self._fixed_u] = 0.0
        return y

    __call__ = apply_K

    # -- diagonals -------------------------------------------------------------

    def local_diag_A(self):
        """``diag(A_tau)`` of every cell's scalar block, shape ``(nc, nl)``.

        Obtained by applying the element kernel to each local unit vector.
        """
        if getattr(self, "_local_diag", None) is None:
            nl = self.nv1**self.dim
            out = np.empty((self.n_cells, nl))
            saved_dim = self.dim
            for i in range(nl):
                E = np.zeros((self.n_cells, nl))
                E[:, i] = 1.0
                # one component is enough: the vector Laplacian is block diagonal
                col = self._local_A_scalar(E)
                out[:, i] = col[:, i]
            assert saved_dim == self.dim
            self._local_diag = out
        return self._local_diag

    def _local_A_scalar(self, E):
        nq = self.nq1**self.dim
        g = self._grads(E)
        flux = self.mu * np.einsum("eqab,ebq->eaq", self.G, g)
        out = self._grads_T(flux)
        if self.gamma_rho:
            vals = self._values(E, self.V) * self.JxW
            out = out + self.gamma_rho * self._values_T(vals.reshape(-1, nq), self.V)
        return out

    def compute_diag_A(self):
        """Exact diagonal of the (unconstrained) assembled ``A``."""
        loc = self.local_diag_A()
        scalar = np.bincount(self.dofmap.l2g_v.reshape(-1), weights=loc.reshape(-1),
                             minlength=self.dofmap.n_scalar)
        return np.tile(scalar, self.dim)

    def compute_diag_Mp(self):
        nl = self.np1**self.dim
        out = np.empty((self.n_cells, nl))
        for i in range(nl):
            E = np.zeros((self.n_cells, nl))
            E[:, i] = 1.0
            out[:, i] = self._values_T(self._values(E, self.Vp) * self.JxW, self.Vp)[:, i]
        return self._scatter_p(out)

    def local_B_columns(self):
        """Element matrices ``B_tau`` as an array ``(nc, n_p_loc, d, n_v_loc)``."""
        nc, d = self.n_cells, self.dim
        nl = self.nv1**d
        out = np.empty((nc, self.np1**d, d, nl))
        for j in range(nl):
            E = np.zeros((nc, nl))
            E[:, j] = 1.0
            g = self._grads(E)  # (nc, d, nq)
            for c in range(d):
                div = np.einsum("eqb,ebq->eq", self.JinvW[..., c], g)
                out[:, :, c, j] = self._values_T(div, self.Vp)
        return out

    def compute_schur_diag_local(self):
        """``sum_tau P_tau^T diag(B_tau diag(A_tau)^{-1} B_tau^T) P_tau``.

        Constrained velocity dofs are left out of the element sums, matching
        the constrained operator whose Schur complement is approximated.
        """
        dA = self.local_diag_A()
        if np.any(dA <= 0):
            raise SingularDiagonalError("zero or negative entry in an element diagonal of A")
        Bloc = self.local_B_columns()
        free = ~self._fixed_u[self._vidx].reshape(self.dim, self.n_cells, -1).transpose(1, 0, 2)
        contrib = np.einsum("eicj,ecj->ei", Bloc**2, free / dA[:, None, :])
        return self._scatter_p(contrib)

    def load_vector(self, f):
        """``(f, v)`` for a body force ``f(points (N, d)) -> (N, d)``; velocity part only."""
        nc, d = self.n_cells, self.dim
        pts = self.quad_points.reshape(-1, d)
        fq = np.asarray(f(pts), dtype=float).reshape(nc, -1, d) * self.JxW[..., None]
        loc = self._values_T(np.moveaxis(fq, -1, 0).reshape(d * nc, -1), self.V)
        return self._scatter_u(loc)
