"""Spectral scaled Student prior on coefficient matrices.

The unnormalized density is ``det(tau^2 I_m + M M^T) ** -((p + m + 2) / 2)``,
which only depends on the singular values of ``M`` and pushes most of them
towards zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lapack

from .errors import ConvergenceError, InvalidInputError, NumericalError


@dataclass(frozen=True)
class PriorConfig:
    """Prior scale and dimensions.

    ``solver`` selects how the gradient's linear system is handled:
    ``"exact"`` uses a Cholesky solve, ``"ridge"`` the matrix-free conjugate
    gradient surrogate with relative tolerance ``tol``.
    """

    tau: float
    m: int
    p: int
    solver: str = "exact"
    tol: float = 1e-8

    def __post_init__(self):
        if not self.tau > 0:
            raise InvalidInputError(f"tau must be positive, got {self.tau}")
        if self.m < 1 or self.p < 1:
            raise InvalidInputError("prior dimensions must be positive")
        if self.solver not in ("exact", "ridge"):
            raise InvalidInputError(f"unknown prior solver {self.solver!r}")
        if not self.tol > 0:
            raise InvalidInputError("tol must be positive")

    @property
    def exponent(self):
        return (self.p + self.m + 2) / 2.0

    @classmethod
    def for_problem(cls, prob, **kwargs):
        return cls(tau=prob.tau, m=prob.m, p=prob.p, **kwargs)


def _check(cfg, M):
    M = np.asarray(M, dtype=float)
    if M.shape != (cfg.m, cfg.p):
        raise InvalidInputError(
            f"coefficient matrix has shape {M.shape}, expected {(cfg.m, cfg.p)}"
        )
    if not np.all(np.isfinite(M)):
        raise InvalidInputError("coefficient matrix has non-finite entries")
    return M


def _cholesky(cfg, M):
    """Lower Cholesky factor of ``tau^2 I + M M^T``."""
    G = M @ M.T
    G.flat[:: G.shape[0] + 1] += cfg.tau ** 2
    # raw LAPACK: the scipy wrappers cost more than the factorization here
    L, info = lapack.dpotrf(G, lower=1, clean=0)
    if info != 0:
        raise NumericalError(f"Cholesky of tau^2 I + M M^T failed (info={info})")
    return L


def _solve(L, M):
    B, info = lapack.dpotrs(L, M, lower=1)
    if info != 0:
        raise NumericalError(f"triangular solve failed (info={info})")
    return B


def _logdet(L):
    return 2.0 * np.log(L.diagonal()).sum()


def log_prior_unnorm(cfg, M):
    """Log prior density up to an additive constant."""
    M = _check(cfg, M)
    return -cfg.exponent * _logdet(_cholesky(cfg, M))


def grad_log_prior(cfg, M):
    """Exact gradient ``-(p + m + 2) (tau^2 I + M M^T)^{-1} M``."""
    M = _check(cfg, M)
    return -2.0 * cfg.exponent * _solve(_cholesky(cfg, M), M)


def prior_terms(cfg, M):
    """Log density and gradient from a single factorization.

    No input validation; this is the sampler's inner-loop entry point.
    """
    L = _cholesky(cfg, M)
    logp = -cfg.exponent * _logdet(L)
    if cfg.solver == "ridge":
        grad = -2.0 * cfg.exponent * ridge_coefficients(M, cfg.tau, cfg.tol)
    else:
        grad = -2.0 * cfg.exponent * _solve(L, M)
    return logp, grad


def ridge_coefficients(M, tau, tol=1e-8, max_iter=None):
    """Minimize ``||I_p - M^T B||_F^2 + tau^2 ||B||_F^2`` over ``B`` (``m x p``).

    Runs conjugate gradients on the normal equations
    ``(M M^T + tau^2 I) B = M`` column by column in parallel, applying the
    operator as ``M (M^T B) + tau^2 B`` so no ``m x m`` matrix is formed.
    Stops once ``||M - A(B)||_F <= tol * ||M||_F``.
    """
    m, p = M.shape
    if max_iter is None:
        max_iter = max(10 * m, 100)
    rhs_norm = np.linalg.norm(M)
    B = np.zeros_like(M)
    if rhs_norm == 0.0:
        return B

    def apply(V):
        return M @ (M.T @ V) + tau ** 2 * V

    R = M.copy()
    D = R.copy()
    rr = np.einsum("ij,ij->j", R, R)
    for _ in range(max_iter):
        if np.sqrt(rr.sum()) <= tol * rhs_norm:
            return B
        AD = apply(D)
        dad = np.einsum("ij,ij->j", D, AD)
        # converged columns have rr = 0 and dad = 0
        step = np.divide(rr, dad, out=np.zeros_like(rr), where=dad > 0)
        B += D * step
        R -= AD * step
        rr_new = np.einsum("ij,ij->j", R, R)
        beta = np.divide(rr_new, rr, out=np.zeros_like(rr), where=rr > 0)
        D = R + D * beta
        rr = rr_new
    residual = np.sqrt(rr.sum()) / rhs_norm
    if residual <= tol:
        return B
    raise ConvergenceError(
        f"ridge solve stopped after {max_iter} iterations at relative "
        f"residual {residual:.3e} (tol {tol:.1e})",
        residual,
    )


def grad_log_prior_ridge(cfg, M, tol=1e-8):
    """Prior gradient with the linear solve replaced by :func:`ridge_coefficients`."""
    if not tol > 0:
        raise InvalidInputError("tol must be positive")
    M = _check(cfg, M)
    return -2.0 * cfg.exponent * ridge_coefficients(M, cfg.tau, tol)
