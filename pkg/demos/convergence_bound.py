"""
Convergence bound next to a measured run
========================================

On a ridge-regularized problem the loss is strongly convex, so the distance to
the optimum obeys U(t+1) = A U(t) + B. We estimate the constants from data,
run the simulator with full participation and compare.
"""

import numpy as np

from otafl.analysis import BoundParams, bound_B, bound_trajectory, estimate_constants, fit_reference, heterogeneity_gap, pooled
from otafl.channel import ChannelConfig
from otafl.config import DatasetConfig, EnergyConfig, ExperimentConfig
from otafl.data import PartitionSpec
from otafl.model import TrainingConfig
from otafl.simulation import prepare_data, run_experiment

reg, eta, tau, K = 0.1, 0.05, 5, 2000
cfg = ExperimentConfig(
    dataset=DatasetConfig(num_classes=10, num_features=4),
    partition=PartitionSpec(num_users=10, samples_per_user=200, k=2),
    training=TrainingConfig(tau=tau, eta=eta, batch_size=50, reg=reg),
    channel=ChannelConfig(K=K),
    energy=EnergyConfig(p_e=1.0),
    rounds=200,
    eval_every=50,
    track_epsilon=False,
)
data = prepare_data(cfg)
dim = data.dim

mu, L, G2 = estimate_constants(data.users, dim, reg, batch_size=50, eta=eta)
gamma = heterogeneity_gap(data.users, dim, reg)
theta_star = fit_reference(pooled(data.users), dim, reg)
print(f"mu={mu}  L={L:.3f}  G^2={G2:.3f}  Gamma={gamma:.4f}")

dist2 = []
run_experiment(cfg, data, callback=lambda t, theta, s: dist2.append(np.sum((theta - theta_star) ** 2)))

params = BoundParams(mu=mu, L=L, G2=G2, Gamma=gamma, tau=tau, eta=eta, K=K, N=dim // 2,
                     sigma_z2=0.1, sigma_h2=1.0, S_size=len(data.users))
bound = bound_trajectory(np.sum(theta_star**2), cfg.rounds, params)

for t in (1, 10, 50, 100, 200):
    print(f"t={t:3d}  measured {dist2[t - 1]:9.4f}  bound {bound[t - 1]:9.4f}")

# which pieces dominate the error floor
_, terms = bound_B(0, params)
for name, value in sorted(terms.items(), key=lambda kv: -kv[1]):
    print(f"  {name:20s} {value:.3e}")
