"""Exact value iteration on small enumerable MDPs (the policy-invariance oracle)."""

from __future__ import annotations

import dataclasses
from collections import deque
from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np

from ..errors import CapacityExceeded, InvalidInput
from .common import joint_actions

MAX_STATES = 10 ** 6


@dataclass
class EnumerableMDP:
    """Transitions as ``K`` weighted branches per ``(state, action)``.

    ``next_states``, ``probs`` and ``rewards`` all have shape ``(S, A, K)``.
    Terminal states are absorbing with value 0.
    """

    next_states: np.ndarray
    probs: np.ndarray
    rewards: np.ndarray
    terminal: np.ndarray

    @property
    def n_states(self) -> int:
        return self.next_states.shape[0]

    @property
    def n_actions(self) -> int:
        return self.next_states.shape[1]


def value_iteration(
    mdp: EnumerableMDP,
    gamma: float,
    tol: float = 1e-10,
    tie_tol: float = 1e-8,
    max_iter: int = 1_000_000,
) -> tuple[np.ndarray, list[frozenset[int]]]:
    """Iterate until the sup-norm change drops below ``tol``.

    Returns state values and, per state, the set of greedy actions (all
    actions within ``tie_tol`` of the best).
    """
    if tol <= 0:
        raise InvalidInput("tol must be > 0")
    if mdp.n_states > MAX_STATES:
        raise CapacityExceeded(f"{mdp.n_states} states exceeds the {MAX_STATES} limit")
    live = ~mdp.terminal
    v = np.zeros(mdp.n_states)
    for _ in range(max_iter):
        q = q_values(mdp, v, gamma)
        v_new = np.where(live, q.max(axis=1), 0.0)
        delta = np.abs(v_new - v).max()
        v = v_new
        if delta < tol:
            break
    q = q_values(mdp, v, gamma)
    best = q.max(axis=1, keepdims=True)
    greedy = [frozenset(np.flatnonzero(row >= b - tie_tol).tolist()) if alive else frozenset()
              for row, b, alive in zip(q, best[:, 0], live)]
    return v, greedy


def q_values(mdp: EnumerableMDP, v: np.ndarray, gamma: float) -> np.ndarray:
    cont = np.where(mdp.terminal, 0.0, v)
    return (mdp.probs * (mdp.rewards + gamma * cont[mdp.next_states])).sum(axis=2)


def bellman_residual(mdp: EnumerableMDP, v: np.ndarray, gamma: float) -> np.ndarray:
    backed = np.where(mdp.terminal, 0.0, q_values(mdp, v, gamma).max(axis=1))
    return np.abs(backed - v)


def shape_mdp(mdp: EnumerableMDP, potential: np.ndarray, gamma: float) -> EnumerableMDP:
    """Add ``gamma * phi(s') - phi(s)`` to every transition; terminal potential is 0."""
    phi_next = np.where(mdp.terminal, 0.0, potential)[mdp.next_states]
    shaped = mdp.rewards + gamma * phi_next - potential[:, None, None]
    return dataclasses.replace(mdp, rewards=shaped)


def random_mdp(
    rng: np.random.Generator,
    n_states: int,
    n_actions: int,
    branching: int = 3,
    terminal_fraction: float = 0.1,
) -> EnumerableMDP:
    nxt = rng.integers(0, n_states, size=(n_states, n_actions, branching))
    probs = rng.dirichlet(np.ones(branching), size=(n_states, n_actions))
    rewards = rng.normal(size=(n_states, n_actions, branching))
    terminal = rng.random(n_states) < terminal_fraction
    return EnumerableMDP(nxt, probs, rewards, terminal)


def enumerate_env_mdp(
    env: Any,
    key: Callable[[Any], Any],
    reward_fn: Callable[[Sequence[float]], float] = sum,
) -> tuple[EnumerableMDP, list[Any]]:
    """Reachable-state MDP of a deterministic env under all joint actions.

    ``key`` maps an env state to a hashable identity (dropping e.g. step
    counters).  Rewards are aggregated across agents with ``reward_fn``.
    """
    acts = joint_actions(env.n_agents, env.n_actions)
    start = env.reset()
    index = {key(start): 0}
    states = [start]
    rows_next, rows_rew, terminal = [], [], []
    queue = deque([start])
    while queue:
        state = queue.popleft()
        if state.done:
            rows_next.append([index[key(state)]] * len(acts))
            rows_rew.append([0.0] * len(acts))
            terminal.append(True)
            continue
        nxt_row, rew_row = [], []
        for a in acts:
            nxt, r, _done, _info = env.step(state, a)
            k = key(nxt)
            if k not in index:
                if len(states) >= MAX_STATES:
                    raise CapacityExceeded("reachable state space too large")
                index[k] = len(states)
                states.append(nxt)
                queue.append(nxt)
            nxt_row.append(index[k])
            rew_row.append(reward_fn(r))
        rows_next.append(nxt_row)
        rows_rew.append(rew_row)
        terminal.append(False)
    # rows were appended in BFS order, which matches the index order
    nxt_arr = np.asarray(rows_next, dtype=np.int64)[:, :, None]
    rew_arr = np.asarray(rows_rew, dtype=float)[:, :, None]
    probs = np.ones_like(rew_arr)
    return EnumerableMDP(nxt_arr, probs, rew_arr, np.asarray(terminal)), states


def delivery_state_key(state: Any) -> tuple:
    return (state.positions, state.fuel, state.package, state.holder, state.done)


def delivery_mdp(env: Any) -> tuple[EnumerableMDP, list[Any]]:
    """Joint MDP of a Fixed delivery env with the step limit lifted."""
    from ..env.grid import GridDeliveryEnv, Randomization

    cfg = env.config
    if cfg.randomization is not Randomization.FIXED or cfg.agent2_delay:
        raise InvalidInput("only Fixed layouts without agent delay are enumerable")
    unlimited = GridDeliveryEnv(dataclasses.replace(cfg, max_episode_len=10 ** 9), env.seed)
    return enumerate_env_mdp(unlimited, delivery_state_key)
