"""Convergence-bound tooling for over-the-air FedAvg with partial participation.

The bound tracks ``U(t) >= E||theta(t) - theta*||^2`` through the recursion
``U(t+1) = A(t) U(t) + B(t)`` where ``A`` is the contraction of local SGD on a
strongly convex loss and ``B`` collects the error floor contributed by fading,
receiver noise, local drift, data heterogeneity and partial participation.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np
from scipy.optimize import minimize
from scipy.sparse.linalg import LinearOperator, cg

from .model import LocalDataset, MinibatchSampler, gradient, hessian_vector_product, loss

log = logging.getLogger(__name__)

Schedule = Union[float, Callable[[int], float]]


class EstimationError(RuntimeError):
    pass


def _at(value, i):
    return value(i) if callable(value) else value


@dataclass
class BoundParams:
    """Constants of the convergence bound.

    ``eta``, ``alpha``, ``S_size`` and ``epsilon`` may be constants or functions
    of the round index. ``c=None`` selects the heuristic
    ``2 sqrt(2 Gamma / mu) + 2 G tau eta(0)``.
    """

    mu: float
    L: float
    G2: float
    Gamma: float
    tau: int
    eta: Schedule
    K: int
    N: int
    sigma_z2: float
    sigma_h2: float
    alpha: Schedule = 1.0
    S_size: Schedule = 1
    epsilon: Schedule = 0.0
    c: float | None = None

    def __post_init__(self):
        if not (self.mu > 0 and self.L > 0 and self.G2 > 0):
            raise ValueError("mu, L and G2 must be positive")
        if self.Gamma < 0 or self.tau < 1 or self.K < 1 or self.N < 1:
            raise ValueError("invalid Gamma, tau, K or N")
        for name in ("mu", "L", "G2", "Gamma", "sigma_z2", "sigma_h2"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")

    @property
    def G(self):
        return math.sqrt(self.G2)

    def c_value(self) -> float:
        if self.c is not None:
            return self.c
        return 2.0 * math.sqrt(2.0 * self.Gamma / self.mu) + 2.0 * self.G * self.tau * _at(self.eta, 0)

    def eta_at(self, i) -> float:
        eta = _at(self.eta, i)
        limit = min(1.0, 1.0 / (self.mu * self.tau))
        if not 0 < eta <= limit * (1 + 1e-12):
            raise ValueError(f"eta({i})={eta} violates 0 < eta <= {limit}")
        return eta


def compute_gamma(global_opt_loss, local_opt_losses, weights) -> float:
    """Heterogeneity gap ``F* - sum_m w_m F_m*``, clamped at zero."""
    weights = np.asarray(weights, dtype=np.float64)
    local = np.asarray(local_opt_losses, dtype=np.float64)
    if weights.shape != local.shape:
        raise ValueError("one weight per local loss is required")
    if abs(weights.sum() - 1.0) > 1e-9 or np.any(weights < 0):
        raise ValueError(f"weights must be non-negative and sum to 1, got sum {weights.sum()}")
    gamma = float(global_opt_loss - weights @ local)
    if gamma < -1e-9:
        log.warning("heterogeneity gap %.3e is negative; optimizers may not have converged", gamma)
    return max(gamma, 0.0)


def compute_epsilon(full_gradients, scheduled) -> float:
    """Distance between the all-user mean gradient and the scheduled-user mean gradient."""
    scheduled = sorted(scheduled)
    if not scheduled:
        raise ValueError("scheduled set is empty")
    grads = np.asarray(full_gradients, dtype=np.float64)
    if len(scheduled) == grads.shape[0]:
        return 0.0
    return float(np.linalg.norm(grads.mean(axis=0) - grads[scheduled].mean(axis=0)))


def bound_A(i, params: BoundParams) -> float:
    eta = params.eta_at(i)
    return 1.0 - params.mu * eta * (params.tau - eta * (params.tau - 1))


def bound_B(i, params: BoundParams):
    """Error floor of round ``i``; returns ``(total, terms)`` with a labeled breakdown."""
    eta = params.eta_at(i)
    tau, G2, G = params.tau, params.G2, params.G
    alpha = _at(params.alpha, i)
    s = _at(params.S_size, i)
    eps = _at(params.epsilon, i)
    drift = eta**2 * tau * (tau - 1) * params.L * G + eta * tau * eps
    terms = {
        "transmission": eta**2 * tau**2 * G2 / params.K,
        "noise": params.sigma_z2 * params.N / (alpha**2 * params.K * s * params.sigma_h2),
        "local_drift": (1 + params.mu * (1 - eta)) * eta**2 * G2 * tau * (tau - 1) * (2 * tau - 1) / 6,
        "fedavg": eta**2 * (tau**2 + tau - 1) * G2 + 2 * eta * (tau - 1) * params.Gamma,
        "participation_sq": drift**2,
        "participation_cross": drift * params.c_value(),
    }
    return sum(terms.values()), terms


def bound_trajectory(initial_dist2, horizon: int, params: BoundParams) -> list[float]:
    """Upper bounds ``U(1), ..., U(horizon)`` with ``U(0) = initial_dist2``."""
    if initial_dist2 < 0:
        raise ValueError("initial_dist2 must be non-negative")
    u = float(initial_dist2)
    out = []
    for t in range(horizon):
        u = bound_A(t, params) * u + bound_B(t, params)[0]
        out.append(u)
    return out


def top_hessian_eigenvalue(grad_fn, theta, rng=0, max_iter=200, tol=1e-7, step=1e-4) -> float:
    """Largest Hessian eigenvalue by power iteration on finite-difference Hessian-vector products."""
    rng = np.random.default_rng(rng)
    theta = np.asarray(theta, dtype=np.float64)
    v = rng.standard_normal(theta.size)
    v /= np.linalg.norm(v)
    prev = None
    for _ in range(max_iter):
        hv = (grad_fn(theta + step * v) - grad_fn(theta - step * v)) / (2 * step)
        lam = float(v @ hv)
        norm = np.linalg.norm(hv)
        if norm == 0:
            return 0.0
        v = hv / norm
        if prev is not None and abs(lam - prev) <= tol * abs(lam):
            return lam
        prev = lam
    raise EstimationError(f"power iteration did not converge in {max_iter} steps")


def estimate_constants(datasets, model_dim, reg, batch_size=100, probe_steps=50, eta=0.05, seed=0):
    """Empirical ``(mu, L, G2)`` for ridge-regularized softmax regression.

    ``mu`` is the ridge coefficient. ``G2`` is 1.5 times the largest squared
    mini-batch gradient norm seen while running ``probe_steps`` local SGD steps
    from zero on every dataset. ``L`` is the largest top Hessian eigenvalue over
    the users, evaluated at zero and at each probe endpoint.
    """
    mu = float(reg)
    g2 = 0.0
    L = 0.0
    for m, data in enumerate(datasets):
        sampler = MinibatchSampler(len(data), min(batch_size, len(data)), [seed, m])
        theta = np.zeros(model_dim)
        def grad_fn(x, data=data):
            return gradient(x, data, reg)
        L = max(L, top_hessian_eigenvalue(grad_fn, theta, rng=[seed, m, 0]))
        for _ in range(probe_steps):
            g = gradient(theta, data.subset(sampler.next()), reg)
            g2 = max(g2, float(g @ g))
            theta = theta - eta * g
        L = max(L, top_hessian_eigenvalue(grad_fn, theta, rng=[seed, m, 1]))
    return mu, L, 1.5 * g2


def pooled(datasets) -> LocalDataset:
    return LocalDataset(
        np.vstack([d.features for d in datasets]),
        np.concatenate([d.labels for d in datasets]),
        datasets[0].num_classes,
    )


def fit_reference(dataset: LocalDataset, model_dim, reg, gtol=1e-9, x0=None) -> np.ndarray:
    """Minimize the ridge-regularized loss to gradient norm ``gtol`` with trust-region Newton-CG."""
    x0 = np.zeros(model_dim) if x0 is None else np.asarray(x0, dtype=np.float64)
    res = minimize(
        loss,
        x0,
        args=(dataset, reg),
        jac=gradient,
        hessp=lambda x, v, d, r: hessian_vector_product(x, d, v, r),
        method="trust-ncg",
        options={"gtol": gtol * 0.1, "maxiter": 1000},
    )
    x = res.x
    # near the optimum loss differences drop below rounding, which stalls the
    # trust region; finish with plain Newton steps driven by the gradient alone
    for _ in range(20):
        g = gradient(x, dataset, reg)
        gnorm = np.linalg.norm(g)
        if gnorm <= gtol:
            return x
        hess = LinearOperator(
            (x.size, x.size), matvec=lambda v: hessian_vector_product(x, dataset, v, reg), dtype=np.float64
        )
        step, _ = cg(hess, -g, rtol=1e-12, maxiter=10 * x.size)
        x = x + step
    gnorm = np.linalg.norm(gradient(x, dataset, reg))
    if gnorm > gtol:
        raise EstimationError(f"reference optimizer stopped at gradient norm {gnorm:.3e}")
    return x


def heterogeneity_gap(datasets, model_dim, reg) -> float:
    """Gap between the global optimum loss and the size-weighted local optima."""
    sizes = np.array([len(d) for d in datasets], dtype=np.float64)
    weights = sizes / sizes.sum()
    everything = pooled(datasets)
    theta_star = fit_reference(everything, model_dim, reg)
    f_star = loss(theta_star, everything, reg)
    local = [loss(fit_reference(d, model_dim, reg), d, reg) for d in datasets]
    return compute_gamma(f_star, local, weights)
