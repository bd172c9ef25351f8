"""End-to-end simulation of over-the-air FL with energy-harvesting users.

One round:

1. every user harvests energy;
2. the policy picks ``S(t)`` among users with a full battery;
3. each scheduled user runs local SGD from the global model and forms its update
   (unit-normalized during the LSE estimation window);
4. updates are packed to complex symbols, sent through a fresh channel
   realization, combined and rescaled into the estimated average update;
5. the global model moves by the estimate and the scheduled users spend their
   energy.

All randomness derives from ``config.seed`` through per-round, per-user streams.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass
from math import ceil

import numpy as np

from . import channel, energy, scheduling
from .analysis import compute_epsilon
from .config import ExperimentConfig
from .data import label_distribution, load_idx, partition, split_per_class, synth_dataset
from .metrics import MetricsRecord, MetricsRow
from .model import gradient, local_train, loss, model_dim, pack_complex, predict

log = logging.getLogger(__name__)

# stream tags for seeding
_DATA, _PARTITION, _ENERGY, _TRAIN, _CHANNEL, _SCHEDULE = range(6)


def stream(seed: int, *tags: int) -> np.random.Generator:
    """Independent generator for ``(seed, *tags)``."""
    return np.random.default_rng([seed, *tags])


def train_seed(seed: int, t: int, user: int):
    return [seed, _TRAIN, t, user]


@dataclass
class ExperimentData:
    users: list
    test: object
    num_features: int
    num_classes: int

    @property
    def dim(self):
        return model_dim(self.num_features, self.num_classes)


def prepare_data(config: ExperimentConfig) -> ExperimentData:
    """Load or generate the corpus, split off the test set and partition the rest."""
    ds = config.dataset
    spec = config.partition
    data_seed = ds.seed if ds.seed is not None else [config.seed, _DATA]
    if ds.name == "synthetic":
        per_class = ds.train_per_class or ceil(spec.num_users * spec.samples_per_user / ds.num_classes)
        corpus = synth_dataset(ds.num_classes, ds.num_features, per_class + ds.test_per_class, data_seed)
        train, test = split_per_class(corpus, ds.test_per_class, [config.seed, _DATA, 1])
    else:
        train = load_idx(ds.train_images, ds.train_labels, ds.num_classes)
        test = load_idx(ds.test_images, ds.test_labels, ds.num_classes)
    if spec.seed is None:
        spec = dataclasses.replace(spec, seed=[config.seed, _PARTITION])
    users = partition(train, spec)
    return ExperimentData(users, test, train.num_features, train.num_classes)


def evaluate(theta, test_set) -> tuple[float, float]:
    """Argmax accuracy and mean cross-entropy of ``theta`` on ``test_set``."""
    pred = predict(theta, test_set)
    accuracy = float(np.mean(pred == test_set.labels))
    return accuracy, loss(theta, test_set)


def _realization(cfg: ExperimentConfig, scheduled, N, t):
    if cfg.channel_mode == "ideal":
        return channel.orthogonal_realization(scheduled, cfg.channel.K, N, cfg.channel.sigma_h2)
    return channel.draw_channel(len(scheduled), N, cfg.channel, stream(cfg.seed, _CHANNEL, t))


def run_experiment(config: ExperimentConfig, data: ExperimentData | None = None, callback=None) -> MetricsRecord:
    """Simulate ``config.rounds`` global rounds and return evaluated metrics.

    ``callback(t, theta, scheduled)`` is invoked after every round with the
    updated global model.
    """
    data = data or prepare_data(config)
    M = len(data.users)
    dim = data.dim
    N = dim // 2
    policy = config.policy
    train_cfg = config.training

    theta = np.zeros(dim)
    p_e = np.asarray(config.energy.p_e, dtype=np.float64)
    state = energy.EnergyState(np.full(M, config.energy.initial_full), np.broadcast_to(p_e, (M,)))
    labels = np.array([label_distribution(d) for d in data.users])
    sizes = np.array([len(d) for d in data.users], dtype=np.float64)
    record = MetricsRecord(energy_initial=int(state.battery.sum()))
    participation = scheduling.ParticipationRecord(M)
    clustering = None
    eps_window = []

    for t in range(config.rounds):
        before = int(state.battery.sum())
        state = energy.harvest(state, stream(config.seed, _ENERGY, t))
        record.energy_harvested += int(state.battery.sum()) - before
        feasible = energy.feasible_users(state)

        estimating = policy.name == "lse" and t < policy.T
        if policy.name == "lse" and t == policy.T:
            if len(participation):
                reps = scheduling.estimate_representations(participation, policy.ridge)
                clustering = scheduling.cluster_users(reps, policy.num_clusters)
            else:
                log.warning("nobody transmitted during estimation; no user can be clustered")
                clustering = scheduling.Clustering(np.full(M, -1), 0)
            record.clustering = clustering

        if policy.name == "none" or estimating:
            scheduled = scheduling.schedule_all(feasible)
            phase = "estimation" if estimating else "all"
        elif policy.name == "entropy":
            scheduled = scheduling.schedule_entropy(feasible, labels, sizes, policy.max_subset)
            phase = "entropy"
        else:
            scheduled = scheduling.schedule_clustered(feasible, clustering, stream(config.seed, _SCHEDULE, t))
            phase = "clustered"
        scheduled = sorted(scheduled)
        record.scheduled_sizes.append(len(scheduled))

        if scheduled and config.track_epsilon:
            grads = np.array([gradient(theta, d, train_cfg.reg) for d in data.users])
            eps_window.append(compute_epsilon(grads, scheduled))

        if scheduled:
            eta = train_cfg.eta_at(t)
            updates = []
            for m in scheduled:
                local = local_train(theta, data.users[m], train_cfg, train_seed(config.seed, t, m), eta=eta)
                delta = local - theta
                if estimating:
                    norm = np.linalg.norm(delta)
                    if norm > 0:
                        delta = delta / norm
                updates.append(pack_complex(delta))
            realization = _realization(config, scheduled, N, t)
            y = channel.transmit_and_combine(np.array(updates), realization, config.channel)
            estimate = channel.estimate_aggregate(y, len(scheduled), config.channel)
            theta = theta + estimate
            if estimating:
                mask = np.zeros(M, dtype=bool)
                mask[scheduled] = True
                participation = scheduling.accumulate_estimation_round(
                    participation, mask, estimate, len(scheduled)
                )
            state = energy.consume(state, scheduled)
            record.energy_consumed += len(scheduled)
        else:
            record.skipped_rounds.append(t + 1)

        if callback is not None:
            callback(t + 1, theta, scheduled)

        if (t + 1) % config.eval_every == 0:
            acc, test_loss = evaluate(theta, data.test)
            eps = float(np.mean(eps_window)) if eps_window else math.nan
            eps_window = []
            record.rows.append(
                MetricsRow(t + 1, len(scheduled), acc, test_loss, eps, len(feasible), phase)
            )

    record.final_model = theta
    return record
