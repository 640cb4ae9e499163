"""N-player cooperate/defect social dilemma played for a fixed number of rounds."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from ..errors import EpisodeFinished, InvalidInput
from ..kernel import AnchorContext, Domain

DEFECT, COOPERATE = 0, 1


class PayoffProfile(str, Enum):
    HOMOGENEOUS = "homogeneous"
    HETEROGENEOUS = "heterogeneous"


class Sparsity(str, Enum):
    BASELINE = "baseline"
    SPARSE = "sparse"


class FlattenMode(str, Enum):
    LEXICOGRAPHIC = "lexicographic"
    COOPERATOR_COUNT = "cooperator_count"


@dataclass(frozen=True)
class DilemmaConfig:
    n_agents: int = 16
    episode_len: int = 16
    profile: PayoffProfile = PayoffProfile.HOMOGENEOUS
    sparsity: Sparsity = Sparsity.SPARSE
    temptation: float = 0.5
    flatten: FlattenMode = FlattenMode.LEXICOGRAPHIC

    def __post_init__(self) -> None:
        object.__setattr__(self, "profile", PayoffProfile(self.profile))
        object.__setattr__(self, "sparsity", Sparsity(self.sparsity))
        object.__setattr__(self, "flatten", FlattenMode(self.flatten))
        if self.n_agents < 2 or self.episode_len < 1:
            raise InvalidInput("need at least two agents and one round")

    @property
    def max_rewards(self) -> tuple[float, ...]:
        if self.profile is PayoffProfile.HOMOGENEOUS:
            return (1.0,) * self.n_agents
        return tuple(1.0 if i % 2 == 0 else 2.0 for i in range(self.n_agents))


def dilemma_step(config: DilemmaConfig, joint_action: Sequence[int]) -> tuple[float, ...]:
    """Per-agent payoffs for one round."""
    if len(joint_action) != config.n_agents:
        raise InvalidInput(f"expected {config.n_agents} actions")
    if any(a not in (DEFECT, COOPERATE) for a in joint_action):
        raise InvalidInput("actions must be 0 (defect) or 1 (cooperate)")
    n = config.n_agents
    k = sum(joint_action)
    r = config.max_rewards
    if config.sparsity is Sparsity.SPARSE:
        return tuple(r) if k == n else (0.0,) * n
    return tuple(r[i] * k / n if a == COOPERATE else config.temptation * r[i]
                 for i, a in enumerate(joint_action))


def flatten_joint_action(joint_action: Sequence[int], config: DilemmaConfig) -> int:
    """Index of a joint action in the kernel domain (agent 0 most significant)."""
    if config.flatten is FlattenMode.COOPERATOR_COUNT:
        return int(sum(joint_action))
    idx = 0
    for a in joint_action:
        idx = idx * 2 + int(a)
    return idx


def joint_action_domain(config: DilemmaConfig) -> Domain:
    if config.flatten is FlattenMode.COOPERATOR_COUNT:
        return Domain((config.n_agents + 1,), kind="joint_action")
    return Domain((2 ** config.n_agents,), kind="joint_action")


@dataclass(frozen=True, slots=True)
class DilemmaState:
    step: int = 0
    prev_actions: tuple[int, ...] | None = None
    prev_rewards: tuple[float, ...] | None = None
    prev_index: int | None = None
    done: bool = False


class DilemmaEnv:
    """Episodic wrapper around :func:`dilemma_step` with per-agent observations.

    An agent observes its own previous action, a coarse bucket of its own
    previous base reward (none / partial / full), and the round index.
    """

    kind = "dilemma"
    n_actions = 2

    def __init__(self, config: DilemmaConfig, seed: int = 0):
        self.config = config
        self.seed = seed

    n_agents = property(lambda self: self.config.n_agents)

    @property
    def domain(self) -> Domain:
        return joint_action_domain(self.config)

    @property
    def is_deterministic(self) -> bool:
        return True

    @property
    def max_episode_len(self) -> int:
        return self.config.episode_len

    def spawn(self, seed: int) -> "DilemmaEnv":
        return DilemmaEnv(self.config, seed)

    def reset(self) -> DilemmaState:
        return DilemmaState()

    def step(self, state: DilemmaState, joint_action: Sequence[int]):
        if state.done:
            raise EpisodeFinished("step() called on a finished episode")
        actions = tuple(int(a) for a in joint_action)
        rewards = dilemma_step(self.config, actions)
        k = sum(actions)
        step = state.step + 1
        done = step >= self.config.episode_len
        new_state = DilemmaState(step=step, prev_actions=actions, prev_rewards=rewards,
                                 prev_index=flatten_joint_action(actions, self.config), done=done)
        info = {"success": k == self.config.n_agents, "cooperators": k, "truncated": False,
                "actions": actions}
        return new_state, rewards, done, info

    def field_cells(self, state: DilemmaState) -> list[int | None]:
        """Kernel cell each agent is scored at: the last joint action's index."""
        return [state.prev_index] * self.config.n_agents

    def entered_cells(self, state: DilemmaState, next_state: DilemmaState) -> list[int | None]:
        """Every round plays a fresh joint action, so every agent enters its cell."""
        return self.field_cells(next_state)

    def _bucket(self, state: DilemmaState, agent: int) -> int:
        if state.prev_rewards is None:
            return 0
        r = state.prev_rewards[agent]
        if r <= 0:
            return 0
        return 2 if r >= self.config.max_rewards[agent] else 1

    def agent_observation(self, state: DilemmaState, agent: int) -> int:
        prev = 0 if state.prev_actions is None else state.prev_actions[agent] + 1
        step = min(state.step, self.config.episode_len - 1)
        return (prev * 3 + self._bucket(state, agent)) * self.config.episode_len + step

    @property
    def agent_observation_size(self) -> int:
        return 9 * self.config.episode_len

    def joint_observation(self, state: DilemmaState) -> int:
        return min(state.step, self.config.episode_len - 1)

    @property
    def joint_observation_size(self) -> int:
        return self.config.episode_len

    def agent_features(self, state: DilemmaState, agent: int) -> np.ndarray:
        f = np.zeros(7)
        f[0 if state.prev_actions is None else state.prev_actions[agent] + 1] = 1.0
        f[3 + self._bucket(state, agent)] = 1.0
        f[6] = state.step / self.config.episode_len
        return f

    @property
    def agent_feature_size(self) -> int:
        return 7

    def joint_features(self, state: DilemmaState) -> np.ndarray:
        coop = 0.0 if state.prev_actions is None else sum(state.prev_actions) / self.config.n_agents
        return np.array([state.step / self.config.episode_len, coop])

    @property
    def joint_feature_size(self) -> int:
        return 2

    def anchor_context(self, state: DilemmaState | None = None) -> AnchorContext:
        """Joint-action kernels anchor at full cooperation."""
        top = self.domain.size - 1
        return AnchorContext(goal=(top,))

    def describe(self, state: DilemmaState) -> dict:
        return {"cooperators": 0 if state.prev_actions is None else sum(state.prev_actions)}
