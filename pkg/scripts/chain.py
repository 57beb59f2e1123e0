#!/usr/bin/env python3
"""
Continuous-time Markov chain i(t) driving the environment.

Samples jump paths with exponential holding times and computes the exact
law of i(t) from the matrix exponential of the intensity matrix.
"""

from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np
from scipy import integrate, linalg

from errors import NotTwoState
from model import SwitchingChain


SeedLike = Union[int, np.random.SeedSequence, np.random.Generator]


@dataclass(frozen=True, eq=False)
class ChainPath:
    """One sampled trajectory of i(t) on [0, horizon]."""

    initial_state: int
    jump_times: np.ndarray
    states_after: np.ndarray
    horizon: float

    @property
    def n_jumps(self) -> int:
        return len(self.jump_times)

    def state_at(self, t: float) -> int:
        """State occupied at time t (right-continuous)."""
        k = int(np.searchsorted(self.jump_times, t, side="right"))
        return int(self.states_after[k - 1]) if k > 0 else self.initial_state

    def jumps_before(self, t: float) -> int:
        """N(t): number of jumps in (0, t]."""
        return int(np.searchsorted(self.jump_times, t, side="right"))

    def time_in_state(self, state: int, t: float = None) -> float:
        """Total time spent in a state over [0, t]."""
        t = self.horizon if t is None else t
        edges = np.concatenate(([0.0], self.jump_times[self.jump_times < t], [t]))
        states = np.concatenate(([self.initial_state], self.states_after))[: len(edges) - 1]
        return float(np.sum(np.diff(edges)[states == state]))


@dataclass(frozen=True)
class OccupationVector:
    """Law of i(t) at a fixed time."""

    probs: np.ndarray
    t: float


def derive_seed(master_seed: int, index: int) -> np.random.SeedSequence:
    """
    Seed for path number `index` of a run.

    The seed depends only on (master_seed, index), never on the order in
    which paths are evaluated.
    """
    return np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(index),))


def sample_path(chain: SwitchingChain, i0: int, horizon: float, seed: SeedLike) -> ChainPath:
    """
    Sample i(t) on [0, horizon].

    Args:
        chain: Switching chain (every exit rate positive)
        i0: Initial state
        horizon: Final time
        seed: Integer, SeedSequence or Generator

    Returns:
        ChainPath with jump times in (0, horizon]
    """
    rng = np.random.default_rng(seed)
    rates = chain.exit_rates
    n = chain.n_states
    times, states = [], []
    t, state = 0.0, int(i0)

    while horizon > 0:
        t += rng.exponential(1.0 / rates[state])
        if t > horizon:
            break
        if n == 2:
            state = 1 - state
        else:
            state = int(rng.choice(n, p=chain.jump_probabilities(state)))
        times.append(t)
        states.append(state)

    return ChainPath(
        initial_state=int(i0),
        jump_times=np.array(times, dtype=float),
        states_after=np.array(states, dtype=int),
        horizon=float(horizon),
    )


def transition_matrix(chain: SwitchingChain, t: float) -> np.ndarray:
    """exp(tQ) by Pade scaling-and-squaring."""
    return linalg.expm(t * chain.q)


def occupation_probabilities(chain: SwitchingChain, i0: int, t: float) -> OccupationVector:
    """
    Exact law of i(t) given i(0) = i0.

    Returns:
        Row i0 of exp(tQ)
    """
    if t == 0:
        probs = np.zeros(chain.n_states)
        probs[i0] = 1.0
        return OccupationVector(probs, 0.0)
    probs = np.clip(transition_matrix(chain, t)[i0], 0.0, None)
    return OccupationVector(probs / probs.sum(), float(t))


def propagate(occupation: OccupationVector, chain: SwitchingChain, s: float) -> OccupationVector:
    """Advance a law of i(t) by time s."""
    probs = occupation.probs @ transition_matrix(chain, s)
    return OccupationVector(probs, occupation.t + s)


def stationary_weights(chain: SwitchingChain) -> Tuple[float, float]:
    """
    Stationary law (p0, p1) = (q1, q0) / (q0 + q1) of a two-state chain.
    """
    if chain.n_states != 2:
        raise NotTwoState(f"stationary weights need a two-state chain, got {chain.n_states} states")
    q0, q1 = chain.exit_rates
    return float(q1 / (q0 + q1)), float(q0 / (q0 + q1))


def expected_jumps(chain: SwitchingChain, i0: int, t: float, n_nodes: int = 2001) -> float:
    """E[N(t)] = integral over [0, t] of sum_i P(i(s) = i) q_i."""
    if t <= 0:
        return 0.0
    s = np.linspace(0.0, t, n_nodes)
    rate = [occupation_probabilities(chain, i0, si).probs @ chain.exit_rates for si in s]
    return float(integrate.simpson(rate, x=s))
