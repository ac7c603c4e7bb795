"""Chebyshev-Jacobi preconditioners and the symmetric inexact Uzawa smoother."""

from __future__ import annotations

from dataclasses import dataclass, field
from math import comb
from typing import Callable, Optional

import numpy as np

#: Power-iteration policy for ``lambda_max(D^{-1} M)``.
POWER_ITERATIONS = 40
POWER_SEED = 1234
SAFETY_FACTOR = 1.05

DIAG_CHOICES = ("exact", "d", "p", "loc")


class EstimationError(ArithmeticError):
    pass


class SetupError(RuntimeError):
    pass


def chebyshev_value(j, s):
    """First-kind Chebyshev polynomial ``C_j(s)`` via the three-term recurrence.

    Exact for ``int`` and ``fractions.Fraction`` arguments.
    """
    c_prev, c = 1, s
    if j == 0:
        return c_prev
    for _ in range(j - 1):
        c_prev, c = c, 2 * s * c - c_prev
    return c


def chebyshev_scale(k, sbar=3):
    """``C_{k+1}(sbar) / (1 + C_{k+1}(sbar))``: the factor that makes ``A_hat >= A``."""
    if k < 0:
        raise ValueError("degree must be non-negative")
    if sbar <= 1:
        raise ValueError("sbar must exceed 1")
    c = chebyshev_value(k + 1, sbar)
    return c / (1 + c)


def eta0(m):
    """``binom(m, floor((m+1)/2)) / 2**m``."""
    return comb(m, (m + 1) // 2) / 2.0**m


def estimate_lambda_max(M_apply: Callable, D, fixed=None, kernel=None, n_iter=POWER_ITERATIONS,
                        seed=POWER_SEED, safety=SAFETY_FACTOR):
    """Power iteration for ``lambda_max(D^{-1} M)`` times ``safety``.

    The eigenvalue is read off the ``D``-Rayleigh quotient. Entries flagged
    in ``fixed`` are held at zero and the ``D``-orthogonal component along
    ``kernel`` is removed every iteration.
    """
    D = np.asarray(D, dtype=float)
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1.0, 1.0, D.size)
    kD = None
    if kernel is not None:
        kernel = np.asarray(kernel, dtype=float)
        kD = D * kernel / (kernel @ (D * kernel))

    def clean(v):
        if fixed is not None:
            v[fixed] = 0.0
        if kD is not None:
            v -= (kD @ v) * kernel
        return v

    x = clean(x)
    lam = 0.0
    for _ in range(n_iter):
        nrm = np.sqrt(x @ (D * x))
        if not np.isfinite(nrm) or nrm == 0.0:
            raise EstimationError("power iteration produced a zero or non-finite iterate")
        x /= nrm
        Mx = M_apply(x)
        lam = x @ Mx
        x = clean(Mx / D)
    if not np.isfinite(lam):
        raise EstimationError("non-finite eigenvalue estimate")
    return safety * lam


@dataclass
class ChebyshevJacobi:
    """``scale * s_k(D^{-1} M) D^{-1}`` targeting the interval ``[beta/2, beta]``."""

    degree: int
    D: np.ndarray
    beta: float
    M: Callable
    scale: float = 1.0
    alpha: float = field(default=None)
    fixed: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.alpha is None:
            self.alpha = self.beta / 2.0
        if np.any(np.asarray(self.D) <= 0):
            raise SetupError("Chebyshev diagonal must be strictly positive")
        if not 0 < self.alpha < self.beta:
            raise SetupError(f"invalid interval [{self.alpha}, {self.beta}]")

    def __call__(self, r):
        return chebyshev_apply(self, r)


def chebyshev_apply(cheb: ChebyshevJacobi, r):
    """Three-term Chebyshev recurrence started from zero.

    ``r`` may be a vector or a matrix of column vectors.
    """
    r = np.array(r, dtype=float)
    Dinv = 1.0 / cheb.D
    if r.ndim == 2:
        Dinv = Dinv[:, None]
    theta = 0.5 * (cheb.beta + cheb.alpha)
    delta = 0.5 * (cheb.beta - cheb.alpha)
    sigma1 = theta / delta
    rho = 1.0 / sigma1
    d = Dinv * r / theta
    x = np.zeros_like(r)
    for _ in range(cheb.degree):
        x += d
        r -= cheb.M(d)
        rho_new = 1.0 / (2.0 * sigma1 - rho)
        d = rho_new * rho * d + (2.0 * rho_new / delta) * (Dinv * r)
        rho = rho_new
    x += d
    x *= cheb.scale
    if cheb.fixed is not None:
        x[cheb.fixed] = 0.0
    return x


@dataclass
class UzawaSmoother:
    """One level's ``A_hat^{-1} = sigma Cheb(A)`` and ``S_hat^{-1} = tau Cheb(S_tilde)``.

    Iteration: ``x <- x + K_hat^{-1} (b - K x)`` with
    ``K_hat = [[A_hat, B^T], [B, B A_hat^{-1} B^T - S_hat]]``.
    """

    op: object
    cheb_A: ChebyshevJacobi
    cheb_S: ChebyshevJacobi
    diag_choice: str

    @property
    def sigma(self):
        return self.cheb_A.scale

    @property
    def tau(self):
        return self.cheb_S.scale

    def Ainv(self, r_u):
        return self.cheb_A(r_u)

    def Sinv(self, r_p):
        return self.cheb_S(r_p)

    def S_tilde(self, p):
        return schur_apply(self.op, self.Ainv, p)

    def correction(self, r):
        """``K_hat^{-1} r`` for a residual ``r = [r_u, r_p]``."""
        n = self.op.n
        y_u = self.Ainv(r[:n])
        y_p = self.Sinv(self.op.apply_B(y_u) - r[n:])
        return np.concatenate([y_u - self.Ainv(self.op.apply_Bt(y_p)), y_p])

    def step(self, x, b):
        return uzawa_step(self, x, b)


class SchurOperator:
    """``p -> B A_hat^{-1} B^T p``."""

    def __init__(self, op, Ainv):
        self.op, self.Ainv = op, Ainv

    def __call__(self, p):
        return schur_apply(self.op, self.Ainv, p)


def schur_apply(op, Ainv, p):
    if np.ndim(p) == 2:
        return np.column_stack([schur_apply(op, Ainv, c) for c in p.T])
    return op.apply_B(Ainv(op.apply_Bt(p)))


def uzawa_step(sm: UzawaSmoother, x, b):
    """One smoothing step: ``u_hat = u + A_hat^{-1}(f - A u - B^T p)``,
    ``p+ = p + S_hat^{-1}(B u_hat - g)``, ``u+ = u_hat - A_hat^{-1} B^T (p+ - p)``."""
    r = b - sm.op.apply_K(x)
    sm.op.constraints.zero(r)
    sm.op.constraints.project_dual(r)
    return x + sm.correction(r)


def _pressure_diag(op, choice, Ainv, assembled):
    from . import verify

    if choice == "exact":
        return verify.exact_schur_diag(op, Ainv)
    if choice == "d":
        if assembled is None:
            assembled = verify.assemble(op.dofmap, op.mu, op.gamma_rho)
        return verify.diag_Sd(assembled)
    if choice == "p":
        return op.compute_diag_Mp()
    if choice == "loc":
        return op.compute_schur_diag_local()
    raise ValueError(f"unknown diagonal choice {choice!r}; expected one of {DIAG_CHOICES}")


def setup_uzawa(op, k_A: int, k_S: int, diag_choice: str = "loc", assembled=None,
                n_iter=POWER_ITERATIONS, seed=POWER_SEED, safety=SAFETY_FACTOR,
                scale=True) -> UzawaSmoother:
    """Setup of the smoother (velocity part first, then pressure part).

    ``scale=False`` skips the Chebyshev scaling factors; only useful to show
    that the spectral inequalities then fail.
    """
    cons = op.constraints
    fixed_u = cons.fixed[: op.n]
    D_A = cons.velocity_diag_for_smoothing(op.compute_diag_A())
    if np.any(D_A <= 0):
        raise SetupError("velocity diagonal has a non-positive entry")
    beta_A = estimate_lambda_max(op.apply_A, D_A, fixed=fixed_u, n_iter=n_iter, seed=seed, safety=safety)
    sigma = chebyshev_scale(k_A) if scale else 1.0
    cheb_A = ChebyshevJacobi(k_A, D_A, beta_A, op.apply_A, scale=sigma, fixed=fixed_u)

    try:
        D_S = np.asarray(_pressure_diag(op, diag_choice, cheb_A, assembled), dtype=float)
    except ArithmeticError as exc:
        raise SetupError(str(exc)) from exc
    if np.any(D_S <= 0) or not np.all(np.isfinite(D_S)):
        raise SetupError(f"Schur diagonal ({diag_choice}) has a non-positive entry")

    S_apply = SchurOperator(op, cheb_A)
    kernel = np.ones(op.m) if cons.mean_constrained else None
    beta_S = estimate_lambda_max(S_apply, D_S, kernel=kernel, n_iter=n_iter, seed=seed + 1, safety=safety)
    tau = chebyshev_scale(k_S) if scale else 1.0
    cheb_S = ChebyshevJacobi(k_S, D_S, beta_S, S_apply, scale=tau)
    return UzawaSmoother(op, cheb_A, cheb_S, diag_choice)
