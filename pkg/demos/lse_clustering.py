"""
Recovering user similarity from over-the-air aggregates
=======================================================

Without label information the server only sees noisy sums of the updates of
whoever transmitted. For the first T rounds every user with energy transmits a
unit-norm update and the server stores the aggregate together with the
participation mask. Least squares over these rows gives one representative
update per user, and cosine clustering of those groups users with similar data.
"""

import numpy as np

from otafl.channel import ChannelConfig
from otafl.config import DatasetConfig, EnergyConfig, ExperimentConfig, PolicyConfig
from otafl.data import PartitionSpec
from otafl.model import TrainingConfig
from otafl.simulation import prepare_data, run_experiment

cfg = ExperimentConfig(
    dataset=DatasetConfig(num_classes=10, num_features=10),
    partition=PartitionSpec(num_users=20, samples_per_user=200, k=1),
    training=TrainingConfig(tau=5, eta=0.05, batch_size=100),
    channel=ChannelConfig(K=200, sigma_h2=1.0, sigma_z2=0.1),
    energy=EnergyConfig(p_e=0.25),
    policy=PolicyConfig(name="lse", T=100, num_clusters=10),
    rounds=150,
    seed=1,
    eval_every=10,
)
data = prepare_data(cfg)
rec = run_experiment(cfg, data)

truth = np.array([int(u.labels[0]) for u in data.users])
print("class of each user:  ", truth)
print("cluster of each user:", rec.clustering.assignment)

# each cluster should hold exactly the users that share a class
for cid, members in sorted(rec.clustering.members.items()):
    print(f"cluster {cid}: users {members} -> classes {sorted(set(truth[members].tolist()))}")

# after the estimation window at most one user per cluster transmits
print("users per round after estimation:", sorted(set(rec.scheduled_sizes[cfg.policy.T:])))
print("final accuracy", rec.rows[-1].test_accuracy)
