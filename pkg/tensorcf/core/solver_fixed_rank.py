"""
Fixed-rank learner over a pair of kernels.

The predictor is f(x, y) = sum_k u_k(x) v_k(y) with u_k = sum_l alpha[l, k] k(x_l, .)
and v_k = sum_l beta[l, k] g(y_l, .). On the training grid the matrix of
predictions is F = K @ alpha @ beta.T @ G and the penalty is

    sum_{i,j} (alpha_i^T K alpha_j) (beta_i^T G beta_j) = tr(gamma^T K gamma G),  gamma = alpha @ beta.T

The objective is convex in alpha and in beta separately, not jointly.
"""

import time
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize, sparse

from tensorcf.config import config
from tensorcf.core.kernels import as_matrix, check_kernel_matrix
from tensorcf.utils import DivergenceError, Log

logger = Log(__name__)


class Strategy:
    JOINT = "joint"
    ALTERNATING = "alternating"


class StopReason:
    GRAD_TOL = "grad_tol"
    MAX_ITER = "max_iter"
    STALLED = "stalled"


# ------------------------------------------------------------------ data types

@dataclass(frozen=True)
class ObservationSet:
    """Observed (row, column, target) triplets over distinct row and column entities."""
    rows: tuple
    cols: tuple
    i: np.ndarray
    j: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        rows, cols = tuple(self.rows), tuple(self.cols)
        i = np.asarray(self.i, dtype=int).ravel()
        j = np.asarray(self.j, dtype=int).ravel()
        z = np.asarray(self.z, dtype=float).ravel()
        for name, value in (("rows", rows), ("cols", cols), ("i", i), ("j", j), ("z", z)):
            object.__setattr__(self, name, value)
        if len(set(rows)) != len(rows):
            raise ValueError("Row entity ids are not distinct")
        if len(set(cols)) != len(cols):
            raise ValueError("Column entity ids are not distinct")
        if not len(i) == len(j) == len(z):
            raise ValueError(f"Triplet arrays differ in length: {len(i)}, {len(j)}, {len(z)}")
        if len(z) < 1:
            raise ValueError("An observation set needs at least one triplet")
        if i.min() < 0 or i.max() >= len(rows) or j.min() < 0 or j.max() >= len(cols):
            raise ValueError(f"Triplet index out of range for a {len(rows)}x{len(cols)} grid")
        if not np.all(np.isfinite(z)):
            raise ValueError("Targets must be finite")
        codes = i * len(cols) + j
        if len(np.unique(codes)) != len(codes):
            raise ValueError("At most one observation per (row, column) pair is allowed")
        for array in (i, j, z):
            array.setflags(write=False)

    @classmethod
    def from_triplets(cls, rows, cols, triplets):
        triplets = list(triplets)
        if not triplets:
            raise ValueError("An observation set needs at least one triplet")
        i, j, z = zip(*triplets)
        return cls(tuple(rows), tuple(cols), np.array(i), np.array(j), np.array(z, dtype=float))

    @classmethod
    def from_dense(cls, Z, mask=None, rows=None, cols=None):
        """Observations at the entries of Z selected by mask (all entries by default)."""
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        mask = np.ones(Z.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
        i, j = np.nonzero(mask.T)[::-1]  # column-major pair order
        rows = tuple(range(Z.shape[0])) if rows is None else rows
        cols = tuple(range(Z.shape[1])) if cols is None else cols
        return cls(rows, cols, i, j, Z[i, j])

    @property
    def n(self):
        return len(self.z)

    @property
    def shape(self):
        return len(self.rows), len(self.cols)

    def triplets(self):
        return list(zip(self.i.tolist(), self.j.tolist(), self.z.tolist()))

    def transpose(self):
        return ObservationSet(self.cols, self.rows, self.j, self.i, self.z)

    def subset(self, indices):
        indices = np.asarray(indices, dtype=int)
        return ObservationSet(self.rows, self.cols, self.i[indices], self.j[indices], self.z[indices])

    def with_targets(self, z):
        return ObservationSet(self.rows, self.cols, self.i, self.j, z)

    def compact(self):
        """Restrict the grid to rows and columns that carry observations.

        Returns the compacted set and the positions of its rows and columns in this grid.
        """
        row_index, i = np.unique(self.i, return_inverse=True)
        col_index, j = np.unique(self.j, return_inverse=True)
        compacted = ObservationSet(
            tuple(self.rows[r] for r in row_index), tuple(self.cols[c] for c in col_index), i, j, self.z
        )
        return compacted, row_index, col_index

    def residual_matrix(self, values):
        """Sparse n_X x n_Y matrix holding `values` at the observed positions."""
        return sparse.csr_matrix((values, (self.i, self.j)), shape=self.shape)

    def dense_targets(self, fill=np.nan):
        Z = np.full(self.shape, fill, dtype=float)
        Z[self.i, self.j] = self.z
        return Z

    @property
    def fully_observed(self):
        return self.n == self.shape[0] * self.shape[1]


class SquareLoss:
    """l(z, z') = (z - z')^2."""

    def value(self, prediction, target):
        return (prediction - target) ** 2

    def derivative(self, prediction, target):
        return 2.0 * (prediction - target)


SQUARE_LOSS = SquareLoss()


@dataclass
class FitReport:
    strategy: str
    iterations: int
    stop_reason: str
    grad_norm: float
    history: list
    evaluations: int = 0
    seconds: float = 0.0


@dataclass
class FactorModel:
    alpha: np.ndarray
    beta: np.ndarray
    report: FitReport = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        self.alpha = np.atleast_2d(np.asarray(self.alpha, dtype=float))
        self.beta = np.atleast_2d(np.asarray(self.beta, dtype=float))
        if self.alpha.shape[1] != self.beta.shape[1]:
            raise ValueError(f"alpha has {self.alpha.shape[1]} columns but beta has {self.beta.shape[1]}")
        if self.alpha.shape[1] < 1:
            raise ValueError("Rank p must be at least 1")
        if not (np.all(np.isfinite(self.alpha)) and np.all(np.isfinite(self.beta))):
            raise ValueError("Factor model has non-finite coefficients")

    @property
    def p(self):
        return self.alpha.shape[1]

    @property
    def gamma(self):
        return self.alpha @ self.beta.T

    def swapped(self):
        return FactorModel(self.beta, self.alpha)


@dataclass(frozen=True)
class FitConfig:
    p: int
    lam: float
    strategy: str = config.DEFAULT_STRATEGY
    max_iter: int = config.DEFAULT_MAX_ITER
    grad_tol: float = config.DEFAULT_GRAD_TOL
    seed: int = 0
    init_scale: float = config.DEFAULT_INIT_SCALE

    def __post_init__(self):
        if int(self.p) < 1:
            raise ValueError(f"Rank p must be at least 1, got {self.p}")
        if self.lam < 0:
            raise ValueError(f"Regularization lambda must be non-negative, got {self.lam}")
        if self.strategy not in (Strategy.JOINT, Strategy.ALTERNATING):
            raise ValueError(f"Unknown strategy '{self.strategy}'")
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be at least 1, got {self.max_iter}")
        if not self.grad_tol > 0:
            raise ValueError(f"grad_tol must be positive, got {self.grad_tol}")
        if not self.init_scale > 0:
            raise ValueError(f"init_scale must be positive, got {self.init_scale}")


# ------------------------------------------------------------------ evaluation

def _check_shapes(alpha, beta, K, G, obs=None):
    if K.shape != (alpha.shape[0], alpha.shape[0]):
        raise ValueError(f"K has shape {K.shape}, expected {(alpha.shape[0],) * 2}")
    if G.shape != (beta.shape[0], beta.shape[0]):
        raise ValueError(f"G has shape {G.shape}, expected {(beta.shape[0],) * 2}")
    if obs is not None and obs.shape != (alpha.shape[0], beta.shape[0]):
        raise ValueError(f"Observation grid {obs.shape} does not match the model grid {(alpha.shape[0], beta.shape[0])}")


def _evaluate(alpha, beta, K, G, obs, lam, loss, need_grad=True):
    P = K @ alpha
    Q = G @ beta
    prediction = np.einsum("uk,uk->u", P[obs.i], Q[obs.j])
    A = alpha.T @ P
    B = beta.T @ Q
    value = float(np.mean(loss.value(prediction, obs.z))) + lam * float(np.sum(A * B))
    if not need_grad:
        return value, None, None
    R = obs.residual_matrix(loss.derivative(prediction, obs.z) / obs.n)
    grad_alpha = K @ (R @ Q) + 2.0 * lam * (P @ B)
    grad_beta = G @ (R.T @ P) + 2.0 * lam * (Q @ A)
    return value, np.asarray(grad_alpha), np.asarray(grad_beta)


def predict_matrix(model, K, G):
    """F = K alpha beta^T G over the training grid."""
    K, G = as_matrix(K), as_matrix(G)
    _check_shapes(model.alpha, model.beta, K, G)
    return (K @ model.alpha) @ (G @ model.beta).T


def predict_new(model, K_cross, G_cross):
    """Predictions for query rows x query columns; K_cross is n_X x m, G_cross is n_Y x q."""
    K_cross, G_cross = np.atleast_2d(K_cross), np.atleast_2d(G_cross)
    if K_cross.shape[0] != model.alpha.shape[0] or G_cross.shape[0] != model.beta.shape[0]:
        raise ValueError(
            f"Cross kernels {K_cross.shape}, {G_cross.shape} do not match a model over "
            f"{model.alpha.shape[0]}x{model.beta.shape[0]} training entities"
        )
    return (K_cross.T @ model.alpha) @ (G_cross.T @ model.beta).T


def predict_pairs(model, K_cross, G_cross, query_i, query_j):
    """Predictions only at the query pairs (query_i[u], query_j[u])."""
    K_cross, G_cross = np.atleast_2d(K_cross), np.atleast_2d(G_cross)
    if K_cross.shape[0] != model.alpha.shape[0] or G_cross.shape[0] != model.beta.shape[0]:
        raise ValueError("Cross kernels do not match the model's training entities")
    P = K_cross.T @ model.alpha
    Q = G_cross.T @ model.beta
    return np.einsum("uk,uk->u", P[np.asarray(query_i)], Q[np.asarray(query_j)])


def objective(model, K, G, obs, lam, loss=SQUARE_LOSS):
    if lam < 0:
        raise ValueError(f"Regularization lambda must be non-negative, got {lam}")
    K, G = as_matrix(K), as_matrix(G)
    _check_shapes(model.alpha, model.beta, K, G, obs)
    value, _, _ = _evaluate(model.alpha, model.beta, K, G, obs, lam, loss, need_grad=False)
    return value


def regularizer(model, K, G):
    """sum_{i,j} (alpha_i^T K alpha_j)(beta_i^T G beta_j)."""
    K, G = as_matrix(K), as_matrix(G)
    A = model.alpha.T @ K @ model.alpha
    B = model.beta.T @ G @ model.beta
    return float(np.sum(A * B))


def gradient(model, K, G, obs, lam, loss=SQUARE_LOSS):
    if lam < 0:
        raise ValueError(f"Regularization lambda must be non-negative, got {lam}")
    K, G = as_matrix(K), as_matrix(G)
    _check_shapes(model.alpha, model.beta, K, G, obs)
    _, grad_alpha, grad_beta = _evaluate(model.alpha, model.beta, K, G, obs, lam, loss)
    return grad_alpha, grad_beta


# ------------------------------------------------------------------ optimization

class IterateTracker:
    """Counts evaluations, caches the last one and fails on a non-finite objective."""

    def __init__(self):
        self.evaluations = 0
        self.accepted = 0
        self.history = []
        self._last_x = None
        self._last_value = None

    def record_evaluation(self, x, value):
        self.evaluations += 1
        if not np.isfinite(value):
            raise DivergenceError(self.accepted, value)
        self._last_x = np.array(x, copy=True)
        self._last_value = value

    def accept(self, x, evaluate):
        self.accepted += 1
        if self._last_x is not None and np.array_equal(x, self._last_x):
            value = self._last_value
        else:
            value = evaluate(x)
        self.history.append(value)


def minimize_lbfgs(fun, x0, tracker, max_iter, grad_tol):
    def callback(xk):
        tracker.accept(xk, lambda x: fun(x)[0])

    return optimize.minimize(
        fun, x0, jac=True, method="L-BFGS-B", callback=callback,
        options={
            "maxiter": max_iter,
            "maxfun": max_iter * config.LBFGS_MAX_LINESEARCH,
            "gtol": grad_tol,
            "ftol": config.LBFGS_FTOL,
            "maxcor": config.LBFGS_MEMORY,
            "maxls": config.LBFGS_MAX_LINESEARCH,
        },
    )


def _solve_alpha_exact(K, G, beta, obs, lam):
    """Closed-form minimizer in alpha for the square loss (beta fixed).

    With column stacking, predictions are D vec(alpha) where row u of D is
    kron(Q[j_u], K[i_u]), Q = G beta, and the penalty is lam vec(alpha)^T kron(B, K) vec(alpha)
    with B = beta^T G beta. The normal equations are PSD and may be singular.
    """
    n_x, p = K.shape[0], beta.shape[1]
    Q = G @ beta
    design = (Q[obs.j][:, :, None] * K[obs.i][:, None, :]).reshape(obs.n, p * n_x)
    B = beta.T @ Q
    system = design.T @ design / obs.n + lam * np.kron(B, K)
    rhs = design.T @ obs.z / obs.n
    solution = linalg.lstsq(system, rhs)[0]
    return solution.reshape((n_x, p), order="F")


def _solve_alpha_block(K, G, alpha_start, beta, obs, lam, loss, grad_tol, max_iter):
    """Minimize over alpha with beta held fixed."""
    if isinstance(loss, SquareLoss) and alpha_start.size <= config.DENSE_BLOCK_LIMIT:
        return _solve_alpha_exact(K, G, beta, obs, lam)
    shape = alpha_start.shape
    tracker = IterateTracker()

    def fun(x):
        value, grad_alpha, _ = _evaluate(x.reshape(shape), beta, K, G, obs, lam, loss)
        tracker.record_evaluation(x, value)
        return value, grad_alpha.ravel()

    result = minimize_lbfgs(fun, alpha_start.ravel(), tracker, max_iter, grad_tol)
    return result.x.reshape(shape)


def _initial_model(n_x, n_y, fit_config):
    rng = np.random.default_rng(fit_config.seed)
    scale = fit_config.init_scale / np.sqrt(fit_config.p)
    alpha = rng.normal(0.0, scale, size=(n_x, fit_config.p))
    beta = rng.normal(0.0, scale, size=(n_y, fit_config.p))
    return alpha, beta


def _fit_joint(K, G, obs, fit_config, loss, alpha, beta):
    size_alpha = alpha.size
    shape_alpha, shape_beta = alpha.shape, beta.shape
    tracker = IterateTracker()

    def fun(x):
        value, grad_alpha, grad_beta = _evaluate(
            x[:size_alpha].reshape(shape_alpha), x[size_alpha:].reshape(shape_beta), K, G, obs, fit_config.lam, loss
        )
        tracker.record_evaluation(x, value)
        return value, np.concatenate([grad_alpha.ravel(), grad_beta.ravel()])

    x0 = np.concatenate([alpha.ravel(), beta.ravel()])
    tracker.history.append(fun(x0)[0])
    result = minimize_lbfgs(fun, x0, tracker, fit_config.max_iter, fit_config.grad_tol)
    logger.debug(f"L-BFGS finished: {result.message}")
    return (
        result.x[:size_alpha].reshape(shape_alpha), result.x[size_alpha:].reshape(shape_beta),
        tracker.history, int(result.nit), tracker.evaluations,
    )


def _fit_alternating(K, G, obs, fit_config, loss, alpha, beta):
    lam = fit_config.lam
    transposed = obs.transpose()
    value, grad_alpha, grad_beta = _evaluate(alpha, beta, K, G, obs, lam, loss)
    history = [value]
    evaluations = 1
    iterations = 0
    inner_tol = 0.1 * fit_config.grad_tol
    for iterations in range(1, fit_config.max_iter + 1):
        candidate = _solve_alpha_block(K, G, alpha, beta, obs, lam, loss, inner_tol, fit_config.max_iter)
        candidate_value, _, _ = _evaluate(candidate, beta, K, G, obs, lam, loss, need_grad=False)
        if candidate_value <= value:
            alpha, value = candidate, candidate_value
        candidate = _solve_alpha_block(G, K, beta, alpha, transposed, lam, loss, inner_tol, fit_config.max_iter)
        candidate_value, _, _ = _evaluate(alpha, candidate, K, G, obs, lam, loss, need_grad=False)
        if candidate_value <= value:
            beta, value = candidate, candidate_value
        value, grad_alpha, grad_beta = _evaluate(alpha, beta, K, G, obs, lam, loss)
        evaluations += 3
        if not np.isfinite(value):
            raise DivergenceError(iterations, value)
        history.append(value)
        if max(np.max(np.abs(grad_alpha)), np.max(np.abs(grad_beta))) <= fit_config.grad_tol:
            break
        if history[-2] - history[-1] <= config.LBFGS_FTOL * max(abs(history[-1]), 1.0):
            break
    return alpha, beta, history, iterations, evaluations


def fit(K, G, obs, fit_config, loss=SQUARE_LOSS):
    """Minimize the fixed-rank objective from a seeded Gaussian initialization."""
    K = check_kernel_matrix(as_matrix(K))
    G = check_kernel_matrix(as_matrix(G))
    if obs.shape != (K.shape[0], G.shape[0]):
        raise ValueError(f"Observation grid {obs.shape} does not match kernels {K.shape[0]}x{G.shape[0]}")
    start = time.time()
    alpha, beta = _initial_model(K.shape[0], G.shape[0], fit_config)
    if fit_config.strategy == Strategy.JOINT:
        alpha, beta, history, iterations, evaluations = _fit_joint(K, G, obs, fit_config, loss, alpha, beta)
    else:
        alpha, beta, history, iterations, evaluations = _fit_alternating(K, G, obs, fit_config, loss, alpha, beta)

    _, grad_alpha, grad_beta = _evaluate(alpha, beta, K, G, obs, fit_config.lam, loss)
    grad_norm = float(max(np.max(np.abs(grad_alpha)), np.max(np.abs(grad_beta))))
    if grad_norm <= fit_config.grad_tol:
        stop_reason = StopReason.GRAD_TOL
    elif iterations >= fit_config.max_iter:
        stop_reason = StopReason.MAX_ITER
    else:
        stop_reason = StopReason.STALLED
    report = FitReport(
        fit_config.strategy, iterations, stop_reason, grad_norm, history, evaluations, time.time() - start
    )
    logger.info(
        f"fixed-rank fit p={fit_config.p} lambda={fit_config.lam:g} strategy={fit_config.strategy}: "
        f"{iterations} iterations, stop={stop_reason}, objective={history[-1]:.6g}, |grad|={grad_norm:.3g}"
    )
    return FactorModel(alpha, beta, report)


def optimal_alpha_value(K, G, beta, obs, lam, loss=SQUARE_LOSS):
    """min over alpha of the objective with beta fixed; convex in K for PSD K."""
    if not lam > 0:
        raise ValueError(f"optimal_alpha_value needs lambda > 0, got {lam}")
    K, G = as_matrix(K), as_matrix(G)
    beta = np.atleast_2d(np.asarray(beta, dtype=float))
    alpha_start = np.zeros((K.shape[0], beta.shape[1]))
    _check_shapes(alpha_start, beta, K, G, obs)
    alpha = _solve_alpha_block(K, G, alpha_start, beta, obs, lam, loss, 1e-9, 10_000)
    value, _, _ = _evaluate(alpha, beta, K, G, obs, lam, loss, need_grad=False)
    return value
