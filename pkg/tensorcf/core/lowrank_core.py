"""Spectral utilities: trace norm, its variational and smoothed forms, rank oracles."""

from dataclasses import dataclass

import numpy as np
from scipy import linalg

RANK_RTOL = 1e-8


@dataclass(frozen=True)
class SingularSpectrum:
    values: np.ndarray

    @classmethod
    def of(cls, M):
        M = _finite_matrix(M)
        if M.size == 0:
            return cls(np.zeros(0))
        values = linalg.svdvals(M)
        return cls(np.clip(values, 0.0, None))

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True)
class FactorPair:
    U: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        U = np.atleast_2d(np.asarray(self.U, dtype=float))
        V = np.atleast_2d(np.asarray(self.V, dtype=float))
        if U.shape[1] != V.shape[0]:
            raise ValueError(f"Factor shapes {U.shape} and {V.shape} are not conformable")
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "V", V)

    @property
    def product(self):
        return self.U @ self.V


def _finite_matrix(M):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if not np.all(np.isfinite(M)):
        raise ValueError("Matrix has non-finite entries")
    return M


def _check_eps(eps):
    if not eps > 0:
        raise ValueError(f"Smoothing parameter eps must be positive, got {eps}")


def trace_norm(M):
    """Sum of singular values."""
    return float(np.sum(SingularSpectrum.of(M).values))


def factor_trace_norm(factors):
    """Variational upper bound 0.5 * (|U|_F^2 + |V|_F^2) >= trace_norm(U @ V)."""
    return 0.5 * (float(np.sum(factors.U ** 2)) + float(np.sum(factors.V ** 2)))


def balanced_factorization(M):
    """U = A sqrt(S), V = sqrt(S) B^T from the thin SVD; attains the trace norm."""
    M = _finite_matrix(M)
    A, s, Bt = linalg.svd(M, full_matrices=False)
    root = np.sqrt(np.clip(s, 0.0, None))
    return FactorPair(A * root, root[:, None] * Bt)


def smoothed_trace_norm(M, eps):
    """Sum of sqrt(sigma_i^2 + eps^2) over all min(m, n) singular values."""
    _check_eps(eps)
    sigma = SingularSpectrum.of(M).values
    return float(np.sum(np.sqrt(sigma ** 2 + eps ** 2)))


def smoothed_trace_norm_gradient(M, eps):
    _check_eps(eps)
    M = _finite_matrix(M)
    if M.size == 0:
        return np.zeros_like(M)
    A, sigma, Bt = linalg.svd(M, full_matrices=False)
    sigma = np.clip(sigma, 0.0, None)
    ratio = sigma / np.sqrt(sigma ** 2 + eps ** 2)
    return (A * ratio) @ Bt


def best_rank_p_approx(M, p):
    """Truncated SVD; the Frobenius-optimal approximation of rank at most p."""
    if p < 0:
        raise ValueError(f"Rank must be non-negative, got {p}")
    M = _finite_matrix(M)
    if p == 0 or M.size == 0:
        return np.zeros_like(M)
    A, sigma, Bt = linalg.svd(M, full_matrices=False)
    p = min(p, len(sigma))
    return (A[:, :p] * sigma[:p]) @ Bt[:p, :]


def numerical_rank(M, rtol=RANK_RTOL):
    sigma = SingularSpectrum.of(M).values
    if len(sigma) == 0 or sigma[0] == 0.0:
        return 0
    return int(np.sum(sigma > rtol * sigma[0]))


def empirical_rank(predictor, xs, ys, rtol=RANK_RTOL):
    """Numerical rank of the sampled matrix M[i, j] = predictor(xs[i], ys[j]).

    Any finite sample gives a lower bound on the rank of the predictor, and it
    never exceeds the number of atomic terms u(x) v(y) the predictor is built from.
    """
    sampled = np.array([[predictor(x, y) for y in ys] for x in xs], dtype=float)
    return numerical_rank(sampled, rtol)
