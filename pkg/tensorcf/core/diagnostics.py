"""
Self-checks of the numerical core, runnable from the CLI.

Each suite returns one or more Check rows with the largest error it observed;
a failing check is report content, never an exception.
"""

import time
from dataclasses import asdict, dataclass

import numpy as np
import pandas as pd
from scipy import linalg

from tensorcf.core import convex_solvers, solver_fixed_rank
from tensorcf.core.kernels import KernelSpec, build_kernel_matrix, kron, unvec, vec
from tensorcf.core.lowrank_core import (
    FactorPair, balanced_factorization, best_rank_p_approx, empirical_rank, factor_trace_norm,
    smoothed_trace_norm, trace_norm,
)
from tensorcf.core.solver_fixed_rank import FactorModel, FitConfig, ObservationSet, Strategy
from tensorcf.utils import Log

logger = Log(__name__)

FD_STEP = 1e-6


@dataclass
class Check:
    name: str
    passed: bool
    max_error: float
    tolerance: float
    seconds: float = 0.0


@dataclass
class DiagnosticsReport:
    checks: list

    @property
    def passed(self):
        return all(check.passed for check in self.checks)

    def failed(self):
        return [check.name for check in self.checks if not check.passed]

    def to_frame(self):
        return pd.DataFrame([asdict(check) for check in self.checks])

    def __str__(self):
        frame = self.to_frame()
        frame["passed"] = frame["passed"].map({True: "PASS", False: "FAIL"})
        return frame.to_string(index=False, float_format=lambda value: f"{value:.3e}")


def _check(name, errors, tolerance, start):
    max_error = float(np.max(errors)) if len(errors) else 0.0
    passed = bool(np.isfinite(max_error) and max_error <= tolerance)
    return Check(name, passed, max_error, tolerance, time.time() - start)


def _relative(a, b):
    return float(np.max(np.abs(a - b)) / max(1.0, float(np.max(np.abs(b)))))


def random_psd(rng, n, ridge=0.1):
    A = rng.normal(size=(n, n))
    return A @ A.T / n + ridge * np.eye(n)


def random_observations(rng, n_x, n_y, fraction=0.7):
    mask = rng.random((n_x, n_y)) < fraction
    mask[0, 0] = True
    return ObservationSet.from_dense(rng.normal(size=(n_x, n_y)), mask)


def interpolated_kernel_pair(rng, n_x, n_y, eta=0.5, zeta=0.5, dim=6):
    def entities(n):
        features = (rng.random((n, dim)) < 0.5).astype(float)
        features[:, 0] = 1.0
        return list(zip(range(n), features))

    K = build_kernel_matrix(KernelSpec.interpolated(eta), entities(n_x)).entries
    G = build_kernel_matrix(KernelSpec.interpolated(zeta), entities(n_y)).entries
    return K, G


# ------------------------------------------------------------------ suites

def kronecker_suite(rng, instances=50, tolerance=1e-10):
    start = time.time()
    mixed, transpose, inverse, vec_errors = [], [], [], []
    for _ in range(instances):
        m, n, p, q, r, s = rng.integers(1, 5, size=6)
        A, B = rng.normal(size=(m, n)), rng.normal(size=(p, q))
        C, D = rng.normal(size=(n, r)), rng.normal(size=(q, s))
        mixed.append(_relative(kron(A, B) @ kron(C, D), kron(A @ C, B @ D)))
        transpose.append(_relative(kron(A, B).T, kron(A.T, B.T)))
        S = rng.normal(size=(m, m)) + m * np.eye(m)
        T = rng.normal(size=(p, p)) + p * np.eye(p)
        inverse.append(_relative(linalg.inv(kron(S, T)), kron(linalg.inv(S), linalg.inv(T))))
        X = rng.normal(size=(n, q))
        Bq = rng.normal(size=(q, p))
        vec_errors.append(_relative(vec(A @ X @ Bq), kron(Bq.T, A) @ vec(X)))
        vec_errors.append(_relative(unvec(vec(X), X.shape), X))
    return [
        _check("kronecker.mixed_product", mixed, tolerance, start),
        _check("kronecker.transpose", transpose, tolerance, start),
        _check("kronecker.inverse", inverse, tolerance, start),
        _check("kronecker.vec", vec_errors, tolerance, start),
    ]


def trace_norm_suite(rng, instances=100, tolerance=1e-10):
    start = time.time()
    balanced, bound, axioms, sandwich = [], [], [], []
    for _ in range(instances):
        m, n = rng.integers(1, 7, size=2)
        M = rng.normal(size=(m, n))
        norm = trace_norm(M)
        balanced.append(abs(factor_trace_norm(balanced_factorization(M)) - norm) / max(1.0, norm))
        k = int(rng.integers(1, 5))
        factors = FactorPair(rng.normal(size=(m, k)), rng.normal(size=(k, n)))
        bound.append(max(0.0, trace_norm(factors.product) - factor_trace_norm(factors)))
        N = rng.normal(size=(m, n))
        c = float(rng.normal())
        axioms.append(max(0.0, trace_norm(M + N) - norm - trace_norm(N)))
        axioms.append(abs(trace_norm(c * M) - abs(c) * norm) / max(1.0, norm))
        axioms.append(max(0.0, -norm))
        r = min(m, n)
        for eps in (1e-1, 1e-2, 1e-3):
            smoothed = smoothed_trace_norm(M, eps)
            sandwich.append(max(0.0, norm - smoothed, smoothed - norm - r * eps))
    return [
        _check("trace_norm.balanced_factorization", balanced, tolerance, start),
        _check("trace_norm.variational_bound", bound, tolerance, start),
        _check("trace_norm.norm_axioms", axioms, tolerance, start),
        _check("trace_norm.smoothed_sandwich", sandwich, tolerance, start),
    ]


def _central_difference(fun, x):
    grad = np.zeros_like(x)
    for k in range(x.size):
        step = np.zeros_like(x)
        step.flat[k] = FD_STEP
        grad.flat[k] = (fun(x + step) - fun(x - step)) / (2 * FD_STEP)
    return grad


def _gradient_error(analytic, numeric):
    return float(np.linalg.norm(analytic - numeric) / max(np.linalg.norm(numeric), 1e-8))


def gradient_suite(rng, instances=20, tolerance=1e-5, gradient_fn=None):
    start = time.time()
    gradient_fn = gradient_fn or solver_fixed_rank.gradient
    fixed_rank, trace = [], []
    for _ in range(instances):
        n_x, n_y, p = int(rng.integers(2, 6)), int(rng.integers(2, 6)), int(rng.integers(1, 4))
        K, G = random_psd(rng, n_x), random_psd(rng, n_y)
        obs = random_observations(rng, n_x, n_y)
        lam = float(rng.uniform(0.01, 0.5))
        alpha, beta = rng.normal(size=(n_x, p)), rng.normal(size=(n_y, p))
        grad_alpha, grad_beta = gradient_fn(FactorModel(alpha, beta), K, G, obs, lam)
        numeric_alpha = _central_difference(
            lambda a: solver_fixed_rank.objective(FactorModel(a, beta), K, G, obs, lam), alpha)
        numeric_beta = _central_difference(
            lambda b: solver_fixed_rank.objective(FactorModel(alpha, b), K, G, obs, lam), beta)
        fixed_rank.append(_gradient_error(np.concatenate([np.ravel(grad_alpha), np.ravel(grad_beta)]),
                                          np.concatenate([numeric_alpha.ravel(), numeric_beta.ravel()])))

        trace_config = convex_solvers.TraceFitConfig(mu=float(rng.uniform(0.1, 1.0)), lam=lam, eps=0.1,
                                                     eps_relative=False)
        gamma = rng.normal(size=(n_x, n_y))
        analytic = convex_solvers.trace_gradient(gamma, K, G, obs, trace_config)
        numeric = _central_difference(lambda g: convex_solvers.trace_objective(g, K, G, obs, trace_config), gamma)
        trace.append(_gradient_error(analytic, numeric))
    return [
        _check("gradient.fixed_rank", fixed_rank, tolerance, start),
        _check("gradient.smoothed_trace", trace, tolerance, start),
    ]


def designed_rank2_matrix(rng, n_x=6, n_y=5, singular_values=(5.0, 2.0)):
    U = linalg.qr(rng.normal(size=(n_x, n_x)))[0][:, :len(singular_values)]
    V = linalg.qr(rng.normal(size=(n_y, n_y)))[0][:, :len(singular_values)]
    return (U * np.asarray(singular_values)) @ V.T


def recovery_suite(rng):
    start = time.time()
    M = designed_rank2_matrix(rng)
    obs = ObservationSet.from_dense(M)
    K, G = np.eye(M.shape[0]), np.eye(M.shape[1])
    checks = []
    for strategy in (Strategy.JOINT, Strategy.ALTERNATING):
        exact = solver_fixed_rank.fit(K, G, obs, FitConfig(p=2, lam=1e-10, strategy=strategy,
                                                           max_iter=2000, grad_tol=1e-10))
        train_mse = float(np.mean((solver_fixed_rank.predict_matrix(exact, K, G) - M) ** 2))
        truncated = solver_fixed_rank.fit(K, G, obs, FitConfig(p=1, lam=1e-10, strategy=strategy,
                                                               max_iter=2000, grad_tol=1e-10))
        distance = float(np.linalg.norm(solver_fixed_rank.predict_matrix(truncated, K, G)
                                        - best_rank_p_approx(M, 1)))
        checks += [
            _check(f"recovery.rank2_train_mse.{strategy}", [train_mse], 1e-6, start),
            _check(f"recovery.eckart_young_rank1.{strategy}", [distance], 1e-3, start),
        ]
    return checks


def ridge_oracle_suite(rng):
    start = time.time()
    K, G = interpolated_kernel_pair(rng, 5, 4)
    obs = random_observations(rng, 5, 4)
    lam = 0.1
    coeffs = convex_solvers.fit_product_ridge(K, G, obs, lam)
    system = convex_solvers.observed_product_gram(K, G, obs) + obs.n * lam * np.eye(obs.n)
    residual = float(np.max(np.abs(system @ coeffs.a - obs.z)))

    K, G = interpolated_kernel_pair(rng, 8, 6)
    Z = rng.normal(size=(8, 6))
    full = ObservationSet.from_dense(Z)
    closed_form = unvec(linalg.solve(kron(G, K) + full.n * lam * np.eye(full.n), vec(Z)), Z.shape)
    model = convex_solvers.fit_trace_norm(
        K, G, full, convex_solvers.TraceFitConfig(mu=0.0, lam=lam, max_iter=5000, grad_tol=1e-10))
    distance = float(np.linalg.norm(model.gamma - closed_form))
    return [
        _check("ridge.solve_residual", [residual], 1e-10, start),
        _check("ridge.trace_mu0_closed_form", [distance], 1e-6, start),
    ]


def rank_suite(rng, sample_sets=20):
    start = time.time()
    exact, bounded = [], []
    for p in (1, 2, 3):
        u = rng.normal(size=(50, p))
        v = rng.normal(size=(50, p))

        def predictor(x, y, u=u, v=v):
            return float(u[x] @ v[y])

        exact.append(abs(empirical_rank(predictor, range(5), range(5)) - p))
        for _ in range(sample_sets):
            size = int(rng.integers(1, 9))
            xs = rng.choice(50, size=size, replace=False)
            ys = rng.choice(50, size=int(rng.integers(1, 9)), replace=False)
            bounded.append(max(0, empirical_rank(predictor, xs, ys) - p))
    return [
        _check("rank.atoms_equal_rank", exact, 0.0, start),
        _check("rank.sample_bound", bounded, 0.0, start),
    ]


def convexity_suite(rng, pairs=20, slack=1e-7):
    start = time.time()
    midpoint = []
    n_x, n_y, p = 4, 3, 2
    G = random_psd(rng, n_y)
    obs = random_observations(rng, n_x, n_y)
    beta = rng.normal(size=(n_y, p))
    lam = 0.1
    for _ in range(pairs):
        K1, K2 = random_psd(rng, n_x, ridge=0.0), random_psd(rng, n_x, ridge=0.0)
        v1 = solver_fixed_rank.optimal_alpha_value(K1, G, beta, obs, lam)
        v2 = solver_fixed_rank.optimal_alpha_value(K2, G, beta, obs, lam)
        vm = solver_fixed_rank.optimal_alpha_value(0.5 * (K1 + K2), G, beta, obs, lam)
        midpoint.append(max(0.0, vm - 0.5 * (v1 + v2) - slack))

    K, G = random_psd(rng, 5), random_psd(rng, 4)
    obs = random_observations(rng, 5, 4)
    trace_config = convex_solvers.TraceFitConfig(mu=0.1, lam=0.1, max_iter=5000, grad_tol=1e-10)
    c = 2.5
    optima = []
    for K_c, G_c in ((c * K, G), (K, c * G)):
        model = convex_solvers.fit_trace_norm(K_c, G_c, obs, trace_config)
        optima.append(convex_solvers.trace_objective(model, K_c, G_c, obs, trace_config.resolved(obs.z)))
    return [
        _check("convexity.alpha_optimum_midpoint", midpoint, 0.0, start),
        _check("convexity.kron_scaling", [abs(optima[0] - optima[1])], 1e-6, start),
    ]


def multitask_suite(rng):
    start = time.time()
    n_x, n_y, lam = 6, 3, 0.05
    K = random_psd(rng, n_x)
    G = np.eye(n_y)
    obs = random_observations(rng, n_x, n_y, fraction=0.8)
    model = solver_fixed_rank.fit(K, G, obs, FitConfig(p=n_y, lam=lam, strategy=Strategy.ALTERNATING,
                                                       max_iter=5000, grad_tol=1e-9))
    fitted = solver_fixed_rank.objective(model, K, G, obs, lam)
    ridge_total = 0.0
    for j in range(n_y):
        rows = obs.i[obs.j == j]
        targets = obs.z[obs.j == j]
        if len(rows) == 0:
            continue
        a = linalg.solve(K[np.ix_(rows, rows)] + obs.n * lam * np.eye(len(rows)), targets)
        predictions = K[np.ix_(rows, rows)] @ a
        ridge_total += (np.sum((predictions - targets) ** 2) / obs.n
                        + lam * float(a @ K[np.ix_(rows, rows)] @ a))

    z = rng.normal(size=n_x)
    duplicated = ObservationSet.from_dense(np.tile(z[:, None], (1, n_y)))
    single = solver_fixed_rank.fit(K, G, duplicated, FitConfig(p=1, lam=lam, strategy=Strategy.ALTERNATING,
                                                               max_iter=2000, grad_tol=1e-10))
    F = solver_fixed_rank.predict_matrix(single, K, G)
    spread = float(np.max(np.abs(F - F[:, :1])))
    return [
        _check("multitask.independent_ridge", [abs(fitted - ridge_total)], 1e-4, start),
        _check("multitask.duplicated_tasks", [spread], 1e-6, start),
    ]


def run_diagnostics(seed=0, gradient_fn=None):
    """Run every suite; `gradient_fn` replaces the fixed-rank gradient under test."""
    rng = np.random.default_rng(seed)
    checks = []
    checks += kronecker_suite(rng)
    checks += trace_norm_suite(rng)
    checks += gradient_suite(rng, gradient_fn=gradient_fn)
    checks += recovery_suite(rng)
    checks += ridge_oracle_suite(rng)
    checks += rank_suite(rng)
    checks += convexity_suite(rng)
    checks += multitask_suite(rng)
    report = DiagnosticsReport(checks)
    for check in report.checks:
        if not check.passed:
            logger.error(f"diagnostic {check.name} failed: max error {check.max_error:.3e} > {check.tolerance:.1e}")
    logger.info(f"diagnostics: {len(checks) - len(report.failed())}/{len(checks)} checks passed")
    return report
