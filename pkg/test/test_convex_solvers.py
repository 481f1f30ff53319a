import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import linalg

from tensorcf.config import config
from tensorcf.core import convex_solvers as cvx
from tensorcf.core.convex_solvers import DualCoefficients, GammaModel, TraceFitConfig
from tensorcf.core.diagnostics import interpolated_kernel_pair, random_psd
from tensorcf.core.kernels import product_gram, unvec, vec
from tensorcf.core.lowrank_core import numerical_rank, smoothed_trace_norm
from tensorcf.core.solver_fixed_rank import ObservationSet

seeds = st.integers(0, 2 ** 32 - 1)


def closed_form_gamma(K, G, Z, lam):
    n = Z.size
    return unvec(linalg.solve(product_gram(K, G) + n * lam * np.eye(n), vec(Z)), Z.shape)


# ------------------------------------------------------------------ product ridge

def test_ridge_single_observation():
    obs = ObservationSet.from_triplets([0], [0], [(0, 0, 3.0)])
    coeffs = cvx.fit_product_ridge(np.eye(1), np.eye(1), obs, 0.5)
    assert coeffs.a[0] == pytest.approx(3.0 / 1.5)
    fitted = cvx.product_ridge_predict(coeffs, obs, np.eye(1), np.eye(1))
    assert fitted[0, 0] == pytest.approx(3.0 / 1.5)


def test_ridge_interpolates_as_lambda_vanishes(rng):
    K, G = interpolated_kernel_pair(rng, 5, 4)
    obs = ObservationSet.from_dense(rng.normal(size=(5, 4)), rng.random((5, 4)) < 0.6)
    coeffs = cvx.fit_product_ridge(K, G, obs, 1e-12)
    fitted = cvx.product_ridge_predict(coeffs, obs, K, G)[obs.i, obs.j]
    assert np.mean((fitted - obs.z) ** 2) <= 1e-8


@given(seeds)
def test_ridge_residual(seed):
    rng = np.random.default_rng(seed)
    K, G = random_psd(rng, 4), random_psd(rng, 3)
    obs = ObservationSet.from_dense(rng.normal(size=(4, 3)), rng.random((4, 3)) < 0.7)
    lam = float(rng.uniform(1e-4, 1.0))
    coeffs = cvx.fit_product_ridge(K, G, obs, lam)
    system = cvx.observed_product_gram(K, G, obs) + obs.n * lam * np.eye(obs.n)
    assert np.max(np.abs(system @ coeffs.a - obs.z)) <= 1e-10


def test_ridge_rejects_non_positive_lambda(rng):
    obs = ObservationSet.from_dense(np.ones((2, 2)))
    with pytest.raises(ValueError):
        cvx.fit_product_ridge(np.eye(2), np.eye(2), obs, 0.0)


def test_ridge_dirac_predictions():
    obs = ObservationSet.from_triplets(range(3), range(3), [(0, 0, 2.0), (1, 2, -1.0)])
    coeffs = cvx.fit_product_ridge(np.eye(3), np.eye(3), obs, 0.1)
    grid = cvx.product_ridge_predict(coeffs, obs, np.eye(3), np.eye(3))
    assert grid[0, 0] == pytest.approx(coeffs.a[0])
    assert grid[1, 2] == pytest.approx(coeffs.a[1])
    assert grid[2, 1] == 0.0
    pairs = cvx.product_ridge_predict_pairs(coeffs, obs, np.eye(3), np.eye(3), [0, 2], [0, 1])
    np.testing.assert_allclose(pairs, [coeffs.a[0], 0.0])


def test_ridge_matches_kronecker_reconstruction(rng):
    K, G = interpolated_kernel_pair(rng, 3, 3)
    obs = ObservationSet.from_dense(rng.normal(size=(3, 3)), rng.random((3, 3)) < 0.6)
    coeffs = cvx.fit_product_ridge(K, G, obs, 0.05)
    codes = obs.j * 3 + obs.i
    dense = unvec(product_gram(K, G)[:, codes] @ coeffs.a, (3, 3))
    np.testing.assert_allclose(cvx.product_ridge_predict(coeffs, obs, K, G), dense, atol=1e-8)


def test_ridge_predict_shape_checks(rng):
    obs = ObservationSet.from_dense(np.ones((2, 2)))
    with pytest.raises(ValueError):
        cvx.product_ridge_predict(DualCoefficients([1.0]), obs, np.eye(2), np.eye(2))
    with pytest.raises(ValueError):
        cvx.product_ridge_predict(DualCoefficients(np.ones(4)), obs, np.eye(3), np.eye(2))


# ------------------------------------------------------------------ trace objective

def test_trace_objective_at_zero(rng):
    K, G = interpolated_kernel_pair(rng, 4, 3)
    obs = ObservationSet.from_dense(rng.normal(size=(4, 3)), rng.random((4, 3)) < 0.7)
    trace_config = TraceFitConfig(mu=0.7, lam=0.1, eps=0.01, eps_relative=False)
    value = cvx.trace_objective(np.zeros((4, 3)), K, G, obs, trace_config)
    assert value == pytest.approx(np.mean(obs.z ** 2) + 0.7 * 3 * 0.01)


def test_trace_config_validation():
    with pytest.raises(ValueError):
        TraceFitConfig(mu=-1.0, lam=0.1)
    with pytest.raises(ValueError):
        TraceFitConfig(mu=1.0, lam=0.0)
    with pytest.raises(ValueError):
        TraceFitConfig(mu=1.0, lam=0.1, eps=0.0)
    resolved = TraceFitConfig(mu=1.0, lam=0.1, eps=1e-3).resolved(np.array([-5.0, 2.0]))
    assert resolved.eps == pytest.approx(5e-3) and not resolved.eps_relative


def test_trace_penalty_is_non_negative(rng):
    for _ in range(50):
        K, G = random_psd(rng, 4, ridge=0.0), random_psd(rng, 3, ridge=0.0)
        gamma = rng.normal(size=(4, 3))
        assert np.trace(gamma.T @ K @ gamma @ G) >= -1e-10


def test_trace_objective_midpoint_convexity(rng):
    K, G = interpolated_kernel_pair(rng, 4, 3)
    obs = ObservationSet.from_dense(rng.normal(size=(4, 3)), rng.random((4, 3)) < 0.7)
    trace_config = TraceFitConfig(mu=0.5, lam=0.1, eps=0.01, eps_relative=False)
    for _ in range(50):
        g1, g2 = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
        mid = cvx.trace_objective(0.5 * (g1 + g2), K, G, obs, trace_config)
        ends = 0.5 * (cvx.trace_objective(g1, K, G, obs, trace_config) + cvx.trace_objective(g2, K, G, obs, trace_config))
        assert mid <= ends + 1e-10


def test_trace_gradient_vanishes_at_zero_targets(rng):
    K, G = interpolated_kernel_pair(rng, 4, 3)
    obs = ObservationSet.from_dense(np.zeros((4, 3)), rng.random((4, 3)) < 0.7)
    trace_config = TraceFitConfig(mu=1.0, lam=0.1, eps=0.01, eps_relative=False)
    np.testing.assert_array_equal(cvx.trace_gradient(np.zeros((4, 3)), K, G, obs, trace_config), 0.0)


@given(seeds)
def test_trace_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    K, G = random_psd(rng, 4), random_psd(rng, 3)
    obs = ObservationSet.from_dense(rng.normal(size=(4, 3)), rng.random((4, 3)) < 0.7)
    trace_config = TraceFitConfig(mu=float(rng.uniform(0.1, 1.0)), lam=0.1, eps=0.1, eps_relative=False)
    gamma = rng.normal(size=(4, 3))
    analytic = cvx.trace_gradient(gamma, K, G, obs, trace_config)
    numeric = np.zeros_like(gamma)
    h = 1e-6
    for index in np.ndindex(*gamma.shape):
        step = np.zeros_like(gamma)
        step[index] = h
        numeric[index] = (cvx.trace_objective(gamma + step, K, G, obs, trace_config)
                          - cvx.trace_objective(gamma - step, K, G, obs, trace_config)) / (2 * h)
    assert np.linalg.norm(analytic - numeric) <= 1e-5 * max(np.linalg.norm(numeric), 1e-8)


def test_trace_gradient_at_closed_form_optimum(rng):
    K, G = interpolated_kernel_pair(rng, 8, 6)
    Z = rng.normal(size=(8, 6))
    gamma = closed_form_gamma(K, G, Z, 0.1)
    gradient = cvx.trace_gradient(gamma, K, G, ObservationSet.from_dense(Z), TraceFitConfig(mu=0.0, lam=0.1))
    assert np.max(np.abs(gradient)) <= 1e-8


# ------------------------------------------------------------------ fit_trace_norm

def test_fit_trace_norm_matches_closed_form(rng):
    K, G = interpolated_kernel_pair(rng, 8, 6)
    Z = rng.normal(size=(8, 6))
    model = cvx.fit_trace_norm(K, G, ObservationSet.from_dense(Z),
                               TraceFitConfig(mu=0.0, lam=0.1, max_iter=5000, grad_tol=1e-10))
    assert np.linalg.norm(model.gamma - closed_form_gamma(K, G, Z, 0.1)) <= 1e-6
    history = np.asarray(model.report.history)
    assert np.all(np.diff(history) <= 1e-12 * np.maximum(1.0, np.abs(history[:-1])))


def test_fit_trace_norm_matches_ridge_when_mu_is_zero(rng):
    K, G = interpolated_kernel_pair(rng, 5, 4)
    obs = ObservationSet.from_dense(rng.normal(size=(5, 4)))
    model = cvx.fit_trace_norm(K, G, obs, TraceFitConfig(mu=0.0, lam=0.05, max_iter=5000, grad_tol=1e-10))
    ridge = cvx.product_ridge_predict(cvx.fit_product_ridge(K, G, obs, 0.05), obs, K, G)
    np.testing.assert_allclose(cvx.predict_gamma(model, K, G), ridge, atol=1e-5)


def test_heavy_trace_penalty_collapses_predictions(rng):
    K, G = interpolated_kernel_pair(rng, 5, 4)
    Z = rng.normal(size=(5, 4))
    model = cvx.fit_trace_norm(K, G, ObservationSet.from_dense(Z), TraceFitConfig(mu=1e6, lam=0.1))
    assert np.linalg.norm(cvx.predict_gamma(model, K, G)) <= 1e-3 * np.linalg.norm(Z)


def test_moderate_trace_penalty_lowers_rank(rng):
    Z = np.outer(rng.normal(size=6), rng.normal(size=5)) + 0.1 * rng.normal(size=(6, 5))
    K, G = np.eye(6), np.eye(5)
    trace_config = TraceFitConfig(mu=0.05, lam=1e-6, eps=1e-4, eps_relative=False, max_iter=5000, grad_tol=1e-10)
    model = cvx.fit_trace_norm(K, G, ObservationSet.from_dense(Z), trace_config)
    assert numerical_rank(cvx.predict_gamma(model, K, G), rtol=1e-3) < 5


def test_trace_norm_of_fit_decreases_with_mu(rng):
    K, G = interpolated_kernel_pair(rng, 5, 4)
    obs = ObservationSet.from_dense(rng.normal(size=(5, 4)), rng.random((5, 4)) < 0.8)
    eps = 1e-3 * float(np.max(np.abs(obs.z)))
    norms = []
    for mu in (0.0, 0.01, 0.1, 1.0, 10.0):
        trace_config = TraceFitConfig(mu=mu, lam=0.01, max_iter=5000, grad_tol=1e-10)
        model = cvx.fit_trace_norm(K, G, obs, trace_config)
        norms.append(smoothed_trace_norm(cvx.predict_gamma(model, K, G), eps))
    assert all(later <= earlier + 1e-6 * max(1.0, earlier) for earlier, later in zip(norms, norms[1:]))


def test_trace_optimum_depends_on_kronecker_product_only(rng):
    K, G = random_psd(rng, 4), random_psd(rng, 3)
    obs = ObservationSet.from_dense(rng.normal(size=(4, 3)), rng.random((4, 3)) < 0.8)
    trace_config = TraceFitConfig(mu=0.1, lam=0.1, max_iter=5000, grad_tol=1e-10)
    optima = []
    for K_c, G_c in ((3.0 * K, G), (K, 3.0 * G)):
        model = cvx.fit_trace_norm(K_c, G_c, obs, trace_config)
        optima.append(cvx.trace_objective(model, K_c, G_c, obs, trace_config.resolved(obs.z)))
    assert optima[0] == pytest.approx(optima[1], abs=1e-6)


def test_fit_trace_norm_size_guard(rng, monkeypatch):
    monkeypatch.setattr(config, "TRACE_SIZE_LIMIT", 10)
    obs = ObservationSet.from_dense(rng.normal(size=(4, 3)))
    trace_config = TraceFitConfig(mu=0.1, lam=0.1, max_iter=50)
    with pytest.raises(ValueError, match="size guard"):
        cvx.fit_trace_norm(np.eye(4), np.eye(3), obs, trace_config)
    assert cvx.fit_trace_norm(np.eye(4), np.eye(3), obs, trace_config, allow_large=True).gamma.shape == (4, 3)


def test_predict_gamma_new_on_training_entities(rng):
    K, G = interpolated_kernel_pair(rng, 4, 3)
    model = GammaModel(rng.normal(size=(4, 3)))
    np.testing.assert_allclose(cvx.predict_gamma_new(model, K, G), cvx.predict_gamma(model, K, G), atol=1e-12)
    with pytest.raises(ValueError):
        GammaModel(np.array([[np.nan]]))
