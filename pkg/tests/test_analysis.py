import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import minimize

from otafl.analysis import (
    BoundParams,
    EstimationError,
    bound_A,
    bound_B,
    bound_trajectory,
    compute_epsilon,
    compute_gamma,
    estimate_constants,
    fit_reference,
    heterogeneity_gap,
    top_hessian_eigenvalue,
)
from otafl.data import synth_dataset
from otafl.model import gradient, loss, model_dim

from conftest import random_dataset


def params(**kw):
    base = dict(mu=1.0, L=2.0, G2=4.0, Gamma=0.5, tau=3, eta=0.05, K=200, N=10,
                sigma_z2=0.1, sigma_h2=1.0, alpha=1.0, S_size=4, epsilon=0.2, c=1.0)
    base.update(kw)
    return BoundParams(**base)


# heterogeneity gap and epsilon

def test_gamma_arithmetic():
    assert compute_gamma(1.0, [0.2, 0.4], [0.5, 0.5]) == pytest.approx(0.7, abs=1e-15)


def test_gamma_identical_problems():
    assert compute_gamma(0.3, [0.3, 0.3, 0.3], [0.2, 0.3, 0.5]) == 0.0


def test_gamma_weight_violation():
    with pytest.raises(ValueError):
        compute_gamma(1.0, [0.2, 0.4], [0.5, 0.6])


def test_gamma_clamps_tiny_negative():
    assert compute_gamma(0.5 - 1e-12, [0.5], [1.0]) == 0.0


def test_gamma_two_single_class_users():
    d = synth_dataset(2, 2, 30, seed=1)
    users = [d.subset(np.flatnonzero(d.labels == c)) for c in range(2)]
    dim, reg = model_dim(2, 2), 0.1

    def bfgs(data):
        res = minimize(loss, np.zeros(dim), args=(data, reg), jac=gradient, method="BFGS",
                       options={"gtol": 1e-10, "maxiter": 10000})
        assert np.linalg.norm(gradient(res.x, data, reg)) <= 1e-8
        return res.fun

    oracle = bfgs(d) - 0.5 * bfgs(users[0]) - 0.5 * bfgs(users[1])
    assert oracle > 0
    assert heterogeneity_gap(users, dim, reg) == pytest.approx(oracle, abs=1e-9)


def test_fit_reference_reaches_tolerance(rng):
    data = random_dataset(rng, n=40)
    theta = fit_reference(data, model_dim(4, 3), 0.05)
    assert np.linalg.norm(gradient(theta, data, 0.05)) <= 1e-9


def test_epsilon_examples():
    g = np.array([[1.0, 0.0], [0.0, 2.0], [3.0, -1.0]])
    assert compute_epsilon(g, {0, 1, 2}) == 0.0
    assert compute_epsilon(np.tile([1.5, -0.5], (4, 1)), {1, 3}) == 0.0
    # mean of all = (4/3, 1/3); subset {0} = (1, 0)
    assert compute_epsilon(g, {0}) == pytest.approx(math.sqrt((1 / 3) ** 2 + (1 / 3) ** 2), rel=1e-14)
    with pytest.raises(ValueError):
        compute_epsilon(g, set())


# bound terms

def test_bound_A_examples():
    assert bound_A(0, params(mu=1.0, tau=1, eta=1.0)) == 0.0
    assert bound_A(0, params(mu=2.0, tau=5, eta=0.1)) == pytest.approx(0.08, abs=1e-15)
    assert bound_A(0, params(eta=1e-12)) == pytest.approx(1.0, abs=1e-11)


def test_eta_precondition():
    with pytest.raises(ValueError):
        bound_A(0, params(mu=2.0, tau=5, eta=0.2))
    with pytest.raises(ValueError):
        bound_B(3, params(eta=lambda i: 0.05 if i < 3 else 0.0))


def test_invalid_params():
    with pytest.raises(ValueError):
        params(mu=0.0)
    with pytest.raises(ValueError):
        params(Gamma=-1.0)
    with pytest.raises(ValueError):
        params(L=float("inf"))


def test_bound_B_single_local_step():
    eta, G2, K, N, s = 0.3, 4.0, 50, 8, 3
    p = params(tau=1, eta=eta, epsilon=0.0, K=K, N=N, S_size=s)
    total, terms = bound_B(0, p)
    assert terms["local_drift"] == 0
    assert terms["participation_sq"] == 0 and terms["participation_cross"] == 0
    expected = eta**2 * G2 / K + 0.1 * N / (1.0 * K * s * 1.0) + eta**2 * G2
    assert total == pytest.approx(expected, rel=1e-14)


def test_bound_B_infinite_antennas():
    p = params(tau=1, eta=0.3, epsilon=0.0, sigma_z2=0.0, K=10**15)
    assert bound_B(0, p)[0] == pytest.approx(0.09 * 4.0, rel=1e-12)


def test_bound_B_full_fixture():
    # term by term by hand: G = 2
    transmission = 0.05**2 * 9 * 4 / 200                  # 0.00045
    noise = 0.1 * 10 / (1 * 200 * 4 * 1)                  # 0.00125
    drift_sq = (1 + 1 * 0.95) * 0.0025 * 4 * 3 * 2 * 5 / 6  # 0.0975
    fedavg = 0.0025 * 11 * 4 + 2 * 0.05 * 2 * 0.5          # 0.21
    d = 0.0025 * 3 * 2 * 2 * 2 + 0.05 * 3 * 0.2            # 0.09
    total, terms = bound_B(0, params())
    assert terms["transmission"] == pytest.approx(transmission, rel=1e-13)
    assert terms["noise"] == pytest.approx(noise, rel=1e-13)
    assert terms["local_drift"] == pytest.approx(drift_sq, rel=1e-13)
    assert terms["fedavg"] == pytest.approx(fedavg, rel=1e-13)
    assert terms["participation_sq"] == pytest.approx(d**2, rel=1e-13)
    assert terms["participation_cross"] == pytest.approx(d * 1.0, rel=1e-13)
    assert total == pytest.approx(0.4073, rel=1e-13)


def test_default_c():
    p = params(c=None, Gamma=0.5, mu=1.0, G2=4.0, tau=3, eta=0.05)
    assert p.c_value() == pytest.approx(2 * math.sqrt(1.0) + 2 * 2 * 3 * 0.05, rel=1e-14)


# trajectory

def test_trajectory_geometric_decay():
    # B = 0 needs G2 -> tiny, K huge, no noise, tau = 1, eps = 0, Gamma = 0
    p = params(tau=1, eta=0.5, mu=1.0, G2=1e-300, Gamma=0.0, sigma_z2=0.0, epsilon=0.0, c=0.0)
    out = bound_trajectory(3.0, 6, p)
    np.testing.assert_allclose(out, [3.0 * 0.5**t for t in range(1, 7)], rtol=1e-14)


def test_trajectory_zero_contraction():
    p = params(tau=1, eta=1.0, mu=1.0, epsilon=lambda i: 0.1 * i)
    out = bound_trajectory(7.0, 4, p)
    np.testing.assert_allclose(out, [bound_B(t, p)[0] for t in range(4)], rtol=1e-15)


def product_sum(u0, A, B):
    T = len(A)
    total = np.prod(A) * u0
    for j in range(T):
        total += B[j] * np.prod(A[j + 1:])
    return total


def test_trajectory_product_sum_three_steps():
    p = params(eta=lambda i: [0.1, 0.05, 0.2][i], epsilon=lambda i: [0.0, 0.3, 0.1][i], S_size=lambda i: i + 1)
    A = [bound_A(i, p) for i in range(3)]
    B = [bound_B(i, p)[0] for i in range(3)]
    out = bound_trajectory(2.0, 3, p)
    for t in range(1, 4):
        assert out[t - 1] == pytest.approx(product_sum(2.0, A[:t], B[:t]), rel=1e-12)


def test_negative_initial_distance_rejected():
    with pytest.raises(ValueError):
        bound_trajectory(-1.0, 3, params())


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31))
def test_recursion_equals_product_sum(seed):
    rng = np.random.default_rng(seed)
    T = int(rng.integers(1, 30))
    mu, tau = float(rng.uniform(0.05, 2)), int(rng.integers(1, 6))
    limit = min(1.0, 1 / (mu * tau))
    etas = rng.uniform(0.01, 1.0, T) * limit
    eps = rng.uniform(0, 1, T)
    p = params(mu=mu, tau=tau, eta=lambda i: etas[i], epsilon=lambda i: eps[i],
               L=float(rng.uniform(0.1, 5)), G2=float(rng.uniform(0.1, 10)))
    u0 = float(rng.uniform(0, 10))
    A = [bound_A(i, p) for i in range(T)]
    B = [bound_B(i, p)[0] for i in range(T)]
    assert all(0 <= a < 1 for a in A)
    assert bound_trajectory(u0, T, p)[-1] == pytest.approx(product_sum(u0, A, B), rel=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31))
def test_trajectory_monotone_in_B(seed):
    rng = np.random.default_rng(seed)
    T = int(rng.integers(2, 20))
    j = int(rng.integers(0, T - 1))
    eps = rng.uniform(0, 0.5, T)
    bumped = eps.copy()
    bumped[j] += float(rng.uniform(0.01, 1))  # epsilon only enters B
    base = bound_trajectory(1.0, T, params(epsilon=lambda i: eps[i]))
    more = bound_trajectory(1.0, T, params(epsilon=lambda i: bumped[i]))
    assert all(m >= b for m, b in zip(more, base))
    assert all(m > b for m, b in zip(more[j + 1:], base[j + 1:]))


# constants

def test_quadratic_has_mu_equal_L():
    lam = 0.7
    assert top_hessian_eigenvalue(lambda th: lam * th, np.zeros(12)) == pytest.approx(lam, rel=1e-9)


def test_power_iteration_failure():
    with pytest.raises(EstimationError):
        top_hessian_eigenvalue(lambda th: np.diag([1.0, 0.99, 0.98]) @ th, np.zeros(3), max_iter=1)


def dense_hessian(theta, data, reg):
    """Analytic Hessian: mean of kron(x x^T, diag(p) - p p^T) over samples plus ridge."""
    C = data.num_classes
    xb = np.hstack([data.features, np.ones((len(data), 1))])
    n_used = xb.shape[1] * C
    W = theta[:n_used].reshape(xb.shape[1], C)
    z = xb @ W
    z -= z.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    H = np.zeros((theta.size, theta.size))
    for xi, pi in zip(xb, p):
        H[:n_used, :n_used] += np.kron(np.outer(xi, xi), np.diag(pi) - np.outer(pi, pi))
    H /= len(data)
    return H + reg * np.eye(theta.size)


def test_L_matches_dense_hessian_twenty_dims(rng):
    data = random_dataset(rng, n=60, num_features=4, num_classes=4)  # (4+1)*4 = 20 parameters
    dim = model_dim(4, 4)
    assert dim == 20
    theta = 0.3 * rng.standard_normal(dim)
    oracle = np.linalg.eigvalsh(dense_hessian(theta, data, 0.1)).max()
    est = top_hessian_eigenvalue(lambda x: gradient(x, data, 0.1), theta, rng=1)
    assert est == pytest.approx(oracle, rel=0.05)
    mu, L, G2 = estimate_constants([data], dim, 0.1, batch_size=20, probe_steps=0)
    assert L == pytest.approx(np.linalg.eigvalsh(dense_hessian(np.zeros(dim), data, 0.1)).max(), rel=0.05)


def test_logistic_mu_is_ridge(rng):
    users = [random_dataset(rng, n=30) for _ in range(3)]
    mu, L, G2 = estimate_constants(users, model_dim(4, 3), 0.25, batch_size=10, probe_steps=5)
    assert mu == 0.25
    assert L >= mu and G2 > 0
    # G2 is 1.5x a max over observed squared gradient norms, so it covers the full gradient at zero
    assert all(np.sum(gradient(np.zeros(model_dim(4, 3)), u, 0.25) ** 2) <= G2 for u in users)
