"""Unit-battery energy harvesting with Bernoulli arrivals."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np


class EnergyContractError(RuntimeError):
    """A user without stored energy was asked to train and transmit."""


@dataclass(frozen=True)
class EnergyState:
    battery: np.ndarray
    p_e: np.ndarray

    def __post_init__(self):
        battery = np.asarray(self.battery, dtype=bool).copy()
        p_e = np.broadcast_to(np.asarray(self.p_e, dtype=np.float64), battery.shape).copy()
        if np.any((p_e < 0) | (p_e > 1)):
            raise ValueError("arrival probabilities must lie in [0, 1]")
        battery.flags.writeable = False
        p_e.flags.writeable = False
        object.__setattr__(self, "battery", battery)
        object.__setattr__(self, "p_e", p_e)

    @classmethod
    def empty(cls, num_users: int, p_e) -> "EnergyState":
        return cls(np.zeros(num_users, dtype=bool), p_e)

    @property
    def num_users(self):
        return self.battery.size


def harvest(state: EnergyState, rng_seed, p_e=None) -> EnergyState:
    """Each user gains one unit with its arrival probability; full batteries drop the surplus.

    ``p_e`` optionally overrides the state's probabilities for this step and is
    kept in the returned state.
    """
    rng = np.random.default_rng(rng_seed)
    if p_e is not None:
        state = replace(state, p_e=p_e)
    arrivals = rng.random(state.num_users) < state.p_e
    return replace(state, battery=state.battery | arrivals)


def feasible_users(state: EnergyState) -> set[int]:
    return {int(m) for m in np.flatnonzero(state.battery)}


def consume(state: EnergyState, scheduled) -> EnergyState:
    scheduled = sorted(scheduled)
    if not scheduled:
        return state
    empty = [m for m in scheduled if not state.battery[m]]
    if empty:
        raise EnergyContractError(f"users {empty} have no stored energy")
    battery = state.battery.copy()
    battery[scheduled] = False
    return replace(state, battery=battery)
