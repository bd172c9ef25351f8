"""User scheduling policies.

* ``schedule_all``: every user with energy participates.
* ``schedule_entropy``: with known label distributions, pick the feasible subset
  whose pooled label distribution has maximal Shannon entropy.
* LSE-based: during an estimation window the server stores aggregate updates
  and participation masks, solves a least-squares problem for one
  representative update per user, clusters users by cosine similarity of those
  representatives and then schedules one feasible user per cluster.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

EXHAUSTIVE_LIMIT = 15
_TIE_TOL = 1e-12


def schedule_all(feasible) -> set[int]:
    return set(feasible)


def _entropy_bits(p):
    p = np.asarray(p, dtype=np.float64)
    logs = np.zeros_like(p)
    nz = p > 0
    logs[nz] = np.log2(p[nz])
    # + 0.0 turns -0.0 into 0.0
    return -np.sum(p * logs, axis=-1) + 0.0


def subset_entropy(subset, labels, weights) -> float:
    """Entropy in bits of the sample-weighted mixture of the subset's label distributions."""
    subset = sorted(subset)
    if not subset:
        raise ValueError("subset must be non-empty")
    labels = np.asarray(labels, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    w = weights[subset]
    mix = (w[:, None] * labels[subset]).sum(axis=0) / w.sum()
    return float(_entropy_bits(mix))


def _exhaustive(users, labels, weights):
    n = len(users)
    codes = np.arange(1, 2**n)
    masks = ((codes[:, None] >> np.arange(n)) & 1).astype(np.float64)
    weighted = weights[users][:, None] * labels[users]
    mix = masks @ weighted / (masks @ weights[users])[:, None]
    h = _entropy_bits(mix)
    best = h.max()
    tied = np.flatnonzero(h >= best - _TIE_TOL)
    # fewest users first, then lexicographically lowest indices
    candidates = [tuple(users[j] for j in range(n) if masks[i, j]) for i in tied]
    return set(min(candidates, key=lambda c: (len(c), c)))


def _mixture_entropy(masks, weighted, w):
    return _entropy_bits(masks @ weighted / (masks @ w)[:, None])


def _greedy(users, labels, weights, max_subset):
    """Forward selection along the full path, best prefix, then drop/add/swap refinement.

    Plain forward selection that stops at the first non-improving addition can
    get stuck on a single high-entropy user; following the path to
    ``max_subset`` and polishing with single-user moves avoids that.
    """
    n = len(users)
    weighted = weights[users][:, None] * labels[users]
    w = weights[users]
    mask = np.zeros(n)
    best_mask, best_h = None, -np.inf
    for _ in range(min(max_subset, n)):
        free = np.flatnonzero(mask == 0)
        cand = np.repeat(mask[None, :], free.size, axis=0)
        cand[np.arange(free.size), free] = 1
        h = _mixture_entropy(cand, weighted, w)
        j = int(np.argmax(h))  # first maximum = lowest index since users are sorted
        mask = cand[j]
        if h[j] > best_h + _TIE_TOL:  # ties keep the shorter prefix
            best_mask, best_h = mask.copy(), h[j]
    mask, current = best_mask, best_h
    while True:
        inside, outside = np.flatnonzero(mask == 1), np.flatnonzero(mask == 0)
        moves = []
        if inside.size > 1:
            drop = np.repeat(mask[None, :], inside.size, axis=0)
            drop[np.arange(inside.size), inside] = 0
            moves.append(drop)
        if outside.size and inside.size < max_subset:
            add = np.repeat(mask[None, :], outside.size, axis=0)
            add[np.arange(outside.size), outside] = 1
            moves.append(add)
        if inside.size and outside.size:
            a, b = np.repeat(inside, outside.size), np.tile(outside, inside.size)
            swap = np.repeat(mask[None, :], a.size, axis=0)
            swap[np.arange(a.size), a] = 0
            swap[np.arange(a.size), b] = 1
            moves.append(swap)
        if not moves:
            break
        cand = np.vstack(moves)
        h = _mixture_entropy(cand, weighted, w)
        j = int(np.argmax(h))
        if h[j] <= current + _TIE_TOL:
            break
        mask, current = cand[j], h[j]
    return {users[i] for i in np.flatnonzero(mask)}


def schedule_entropy(feasible, labels, weights, max_subset: int | None = None) -> set[int]:
    """Maximum-entropy subset of ``feasible``.

    Exhaustive over all non-empty subsets when there are at most
    ``EXHAUSTIVE_LIMIT`` feasible users (ties go to the smallest subset, then to
    the lowest user indices), greedy forward selection with local refinement
    otherwise. ``max_subset`` only limits the greedy search.
    """
    users = sorted(feasible)
    if not users:
        return set()
    labels = np.asarray(labels, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if len(users) <= EXHAUSTIVE_LIMIT:
        return _exhaustive(users, labels, weights)
    return _greedy(users, labels, weights, max_subset or len(users))


def schedule_entropy_greedy(feasible, labels, weights, max_subset: int | None = None) -> set[int]:
    users = sorted(feasible)
    if not users:
        return set()
    labels = np.asarray(labels, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    return _greedy(users, labels, weights, max_subset or len(users))


@dataclass(frozen=True)
class ParticipationRecord:
    """Participation masks (rows of ``A``) and stored sum-form aggregate rows."""

    num_users: int
    masks: tuple = ()
    rows: tuple = ()

    @property
    def A(self) -> np.ndarray:
        return np.array(self.masks, dtype=np.float64).reshape(len(self.masks), self.num_users)

    @property
    def Y(self) -> np.ndarray:
        return np.array(self.rows, dtype=np.float64)

    def __len__(self):
        return len(self.masks)


def accumulate_estimation_round(record: ParticipationRecord, mask, aggregate_estimate, num_scheduled: int):
    """Append one estimation-phase observation.

    ``aggregate_estimate`` is the server's average-form estimate; it is stored
    multiplied by ``num_scheduled`` so that each row models ``A_j @ Theta``.
    """
    mask = np.asarray(mask).astype(bool)
    if mask.shape != (record.num_users,):
        raise ValueError(f"mask must have length {record.num_users}")
    if not mask.any():
        raise ValueError("mask has no participants")
    if record.rows and len(aggregate_estimate) != len(record.rows[0]):
        raise ValueError("aggregate length differs from stored rows")
    row = num_scheduled * np.asarray(aggregate_estimate, dtype=np.float64)
    return ParticipationRecord(
        record.num_users,
        record.masks + (mask.astype(np.int8),),
        record.rows + (row,),
    )


class RankDeficiencyError(np.linalg.LinAlgError):
    def __init__(self, unidentifiable):
        self.unidentifiable = list(unidentifiable)
        super().__init__(
            "participation matrix is rank deficient; unidentifiable users: "
            f"{self.unidentifiable}"
        )


@dataclass(frozen=True)
class RepresentationMatrix:
    reps: np.ndarray
    identifiable: np.ndarray

    @property
    def unidentifiable(self) -> list[int]:
        return [int(m) for m in np.flatnonzero(~self.identifiable)]


def default_ridge(A) -> float:
    A = np.asarray(A, dtype=np.float64)
    return 1e-6 * float(np.sum(A * A)) / A.shape[1]


def estimate_representations(record: ParticipationRecord, ridge: float | None = None) -> RepresentationMatrix:
    """Least-squares representative updates from ``Y = A @ Theta + noise``.

    Solves ``(A^T A + ridge I) Theta = A^T Y``. ``ridge=None`` uses
    ``1e-6 * trace(A^T A) / M``. Users who never participated are flagged as
    unidentifiable.
    """
    if len(record) == 0:
        raise ValueError("record has no rows")
    A, Y = record.A, record.Y
    identifiable = A.sum(axis=0) > 0
    if ridge is None:
        ridge = default_ridge(A)
    gram = A.T @ A
    if ridge == 0 and np.linalg.matrix_rank(gram) < A.shape[1]:
        raise RankDeficiencyError(np.flatnonzero(~identifiable))
    gram[np.diag_indices_from(gram)] += ridge
    reps = np.linalg.solve(gram, A.T @ Y)
    return RepresentationMatrix(reps, identifiable)


@dataclass(frozen=True)
class Clustering:
    """``assignment[m]`` is the cluster id of user ``m`` or ``-1`` if unassigned."""

    assignment: np.ndarray
    num_clusters: int
    members: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.members:
            groups = {}
            for m, c in enumerate(self.assignment):
                if c >= 0:
                    groups.setdefault(int(c), []).append(m)
            object.__setattr__(self, "members", groups)


def cosine_distances(rows) -> np.ndarray:
    """Pairwise ``1 - cos`` between rows; a zero row is at distance 1 from every other row."""
    rows = np.asarray(rows, dtype=np.float64)
    norms = np.linalg.norm(rows, axis=1)
    unit = np.divide(rows, norms[:, None], out=np.zeros_like(rows), where=norms[:, None] > 0)
    dist = 1.0 - unit @ unit.T
    np.clip(dist, 0.0, 2.0, out=dist)
    np.fill_diagonal(dist, 0.0)
    return dist


def average_linkage(dist, num_clusters: int) -> np.ndarray:
    """Agglomerative clustering with average linkage on a precomputed distance matrix.

    Merges the closest pair until ``num_clusters`` remain; ties go to the pair
    with the smallest (lowest-member) indices. Labels are numbered by each
    cluster's lowest member.
    """
    n = dist.shape[0]
    clusters = {i: [i] for i in range(n)}
    d = np.array(dist, dtype=np.float64)
    np.fill_diagonal(d, np.inf)
    active = np.ones(n, dtype=bool)
    while len(clusters) > num_clusters:
        masked = np.where(active[:, None] & active[None, :], d, np.inf)
        best = masked.min()
        i, j = np.argwhere(masked <= best + _TIE_TOL)[0]  # row-major: smallest (i, j)
        i, j = min(i, j), max(i, j)
        ni, nj = len(clusters[i]), len(clusters[j])
        merged = (ni * d[i] + nj * d[j]) / (ni + nj)
        d[i, :] = merged
        d[:, i] = merged
        d[i, i] = np.inf
        active[j] = False
        clusters[i] = clusters[i] + clusters.pop(j)
    labels = np.empty(n, dtype=np.int64)
    for cid, key in enumerate(sorted(clusters)):
        labels[clusters[key]] = cid
    return labels


def cluster_users(reps: RepresentationMatrix, num_clusters: int) -> Clustering:
    ids = np.flatnonzero(reps.identifiable)
    if ids.size == 0:
        raise ValueError("no identifiable users to cluster")
    if ids.size < num_clusters:
        log.warning("only %d identifiable users; reducing clusters from %d", ids.size, num_clusters)
        num_clusters = int(ids.size)
    labels = average_linkage(cosine_distances(reps.reps[ids]), num_clusters)
    assignment = np.full(reps.reps.shape[0], -1, dtype=np.int64)
    assignment[ids] = labels
    return Clustering(assignment, num_clusters)


def schedule_clustered(feasible, clustering: Clustering, rng_seed) -> set[int]:
    """One uniformly chosen feasible member from every cluster that has one."""
    rng = np.random.default_rng(rng_seed)
    feasible = set(feasible)
    chosen = set()
    for cid in sorted(clustering.members):
        avail = [m for m in clustering.members[cid] if m in feasible]
        if avail:
            chosen.add(avail[int(rng.integers(len(avail)))])
    return chosen
