"""
Convex formulations: product-kernel ridge regression and the trace-norm
penalized problem over the full coefficient matrix gamma (F = K gamma G).

The trace norm is replaced by its smoothed version sum sqrt(sigma_i^2 + eps^2),
which keeps the objective convex in gamma and makes it differentiable.
"""

import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg

from tensorcf.config import config
from tensorcf.core.kernels import as_matrix, check_kernel_matrix
from tensorcf.core.lowrank_core import smoothed_trace_norm, smoothed_trace_norm_gradient
from tensorcf.core.solver_fixed_rank import SQUARE_LOSS, FitReport, StopReason, minimize_lbfgs, IterateTracker
from tensorcf.utils import Log

logger = Log(__name__)

RIDGE_RESIDUAL_TOL = 1e-10


@dataclass(frozen=True)
class DualCoefficients:
    a: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "a", np.asarray(self.a, dtype=float).ravel())


@dataclass
class GammaModel:
    gamma: np.ndarray
    report: FitReport = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        self.gamma = np.atleast_2d(np.asarray(self.gamma, dtype=float))
        if not np.all(np.isfinite(self.gamma)):
            raise ValueError("gamma has non-finite entries")


@dataclass(frozen=True)
class TraceFitConfig:
    mu: float
    lam: float
    eps: float = config.DEFAULT_TRACE_EPS
    eps_relative: bool = True
    max_iter: int = config.DEFAULT_MAX_ITER
    grad_tol: float = config.DEFAULT_GRAD_TOL

    def __post_init__(self):
        if self.mu < 0:
            raise ValueError(f"mu must be non-negative, got {self.mu}")
        if not self.lam > 0:
            raise ValueError(f"lambda must be positive, got {self.lam}")
        if not self.eps > 0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be at least 1, got {self.max_iter}")
        if not self.grad_tol > 0:
            raise ValueError(f"grad_tol must be positive, got {self.grad_tol}")

    def resolved(self, targets):
        """Absolute-eps copy; a relative eps is scaled by max|z|."""
        if not self.eps_relative:
            return self
        scale = float(np.max(np.abs(targets))) if len(targets) else 1.0
        return replace(self, eps=self.eps * (scale if scale > 0 else 1.0), eps_relative=False)


# ------------------------------------------------------------------ product ridge

def observed_product_gram(K, G, obs):
    """n x n Gram over observed pairs: K[i(u), i(v)] * G[j(u), j(v)]."""
    K, G = as_matrix(K), as_matrix(G)
    return K[np.ix_(obs.i, obs.i)] * G[np.ix_(obs.j, obs.j)]


def fit_product_ridge(K, G, obs, lam):
    """Solve (K_obs + n lam I) a = z."""
    if not lam > 0:
        raise ValueError(f"Product ridge needs lambda > 0, got {lam}")
    gram = observed_product_gram(K, G, obs)
    system = gram + obs.n * lam * np.eye(obs.n)
    try:
        a = linalg.cho_solve(linalg.cho_factor(system), obs.z)
    except linalg.LinAlgError as e:
        raise ValueError(f"Product ridge system is singular: {e}") from e
    residual = float(np.max(np.abs(system @ a - obs.z)))
    if residual > RIDGE_RESIDUAL_TOL * max(1.0, float(np.max(np.abs(obs.z)))):
        raise ValueError(f"Product ridge solve residual {residual:.3e} exceeds tolerance")
    logger.info(f"product ridge fit over {obs.n} observations, lambda={lam:g}")
    return DualCoefficients(a)


def product_ridge_predict(coeffs, obs, K_eval, G_eval):
    """Predictions for query rows x query columns.

    K_eval holds k(x_l, query) for the n_X training rows (n_X x m), G_eval likewise (n_Y x q).
    """
    K_eval, G_eval = np.atleast_2d(K_eval), np.atleast_2d(G_eval)
    if len(coeffs.a) != obs.n:
        raise ValueError(f"{len(coeffs.a)} coefficients for {obs.n} observations")
    if K_eval.shape[0] != obs.shape[0] or G_eval.shape[0] != obs.shape[1]:
        raise ValueError(f"Evaluation kernels {K_eval.shape}, {G_eval.shape} do not match grid {obs.shape}")
    return (K_eval[obs.i].T * coeffs.a) @ G_eval[obs.j]


def product_ridge_predict_pairs(coeffs, obs, K_eval, G_eval, query_i, query_j):
    K_eval, G_eval = np.atleast_2d(K_eval), np.atleast_2d(G_eval)
    left = K_eval[obs.i][:, np.asarray(query_i)]
    right = G_eval[obs.j][:, np.asarray(query_j)]
    return coeffs.a @ (left * right)


# ------------------------------------------------------------------ trace norm

def _trace_terms(gamma, K, G, obs, trace_config, need_grad=True):
    F = K @ gamma @ G
    prediction = F[obs.i, obs.j]
    penalty = float(np.sum(gamma * F))  # tr(gamma^T K gamma G)
    value = (
        float(np.mean(SQUARE_LOSS.value(prediction, obs.z)))
        + trace_config.mu * smoothed_trace_norm(F, trace_config.eps)
        + trace_config.lam * penalty
    )
    if not need_grad:
        return value, None
    R = obs.residual_matrix(SQUARE_LOSS.derivative(prediction, obs.z) / obs.n).toarray()
    inner = R + 2.0 * trace_config.lam * gamma
    if trace_config.mu > 0:
        inner = inner + trace_config.mu * smoothed_trace_norm_gradient(F, trace_config.eps)
    return value, K @ inner @ G


def _check_trace_shapes(gamma, K, G, obs):
    if gamma.shape != (K.shape[0], G.shape[0]):
        raise ValueError(f"gamma has shape {gamma.shape}, expected {(K.shape[0], G.shape[0])}")
    if obs.shape != gamma.shape:
        raise ValueError(f"Observation grid {obs.shape} does not match gamma {gamma.shape}")


def trace_objective(gamma, K, G, obs, trace_config):
    """Loss + mu * smoothed trace norm of K gamma G + lam * tr(gamma^T K gamma G); eps used as given."""
    if not isinstance(trace_config, TraceFitConfig):
        raise ValueError("trace_objective needs a TraceFitConfig")
    K, G = as_matrix(K), as_matrix(G)
    gamma = gamma.gamma if isinstance(gamma, GammaModel) else np.asarray(gamma, dtype=float)
    _check_trace_shapes(gamma, K, G, obs)
    return _trace_terms(gamma, K, G, obs, trace_config, need_grad=False)[0]


def trace_gradient(gamma, K, G, obs, trace_config):
    K, G = as_matrix(K), as_matrix(G)
    gamma = gamma.gamma if isinstance(gamma, GammaModel) else np.asarray(gamma, dtype=float)
    _check_trace_shapes(gamma, K, G, obs)
    return _trace_terms(gamma, K, G, obs, trace_config)[1]


def fit_trace_norm(K, G, obs, trace_config, allow_large=False):
    """Minimize the smoothed trace-norm objective from gamma = 0.

    The number of parameters is n_X * n_Y; grids above config.TRACE_SIZE_LIMIT
    are refused unless allow_large is set.
    """
    K = check_kernel_matrix(as_matrix(K))
    G = check_kernel_matrix(as_matrix(G))
    shape = (K.shape[0], G.shape[0])
    if obs.shape != shape:
        raise ValueError(f"Observation grid {obs.shape} does not match kernels {shape}")
    if shape[0] * shape[1] > config.TRACE_SIZE_LIMIT and not allow_large:
        raise ValueError(
            f"Trace-norm fit over {shape[0]}x{shape[1]} parameters exceeds the size guard "
            f"{config.TRACE_SIZE_LIMIT}; pass allow_large=True to override"
        )
    resolved = trace_config.resolved(obs.z)
    start = time.time()
    tracker = IterateTracker()

    def fun(x):
        value, grad = _trace_terms(x.reshape(shape), K, G, obs, resolved)
        tracker.record_evaluation(x, value)
        return value, grad.ravel()

    x0 = np.zeros(shape[0] * shape[1])
    tracker.history.append(fun(x0)[0])
    result = minimize_lbfgs(fun, x0, tracker, resolved.max_iter, resolved.grad_tol)
    gamma = result.x.reshape(shape)

    _, grad = _trace_terms(gamma, K, G, obs, resolved)
    grad_norm = float(np.max(np.abs(grad)))
    if grad_norm <= resolved.grad_tol:
        stop_reason = StopReason.GRAD_TOL
    elif result.nit >= resolved.max_iter:
        stop_reason = StopReason.MAX_ITER
    else:
        stop_reason = StopReason.STALLED
    report = FitReport("lbfgs", int(result.nit), stop_reason, grad_norm, tracker.history,
                       tracker.evaluations, time.time() - start)
    logger.info(
        f"trace-norm fit mu={resolved.mu:g} lambda={resolved.lam:g} eps={resolved.eps:g}: "
        f"{result.nit} iterations, stop={stop_reason}, objective={tracker.history[-1]:.6g}"
    )
    return GammaModel(gamma, report)


def predict_gamma(model, K, G):
    return as_matrix(K) @ model.gamma @ as_matrix(G)


def predict_gamma_new(model, K_cross, G_cross):
    return np.atleast_2d(K_cross).T @ model.gamma @ np.atleast_2d(G_cross)
