"""Learner configuration, trial metrics and greedy evaluation shared by all trainers."""

from __future__ import annotations

import io
import math
import zipfile
from dataclasses import dataclass, field, asdict
from enum import Enum
from pathlib import Path
from typing import Any, Mapping, NamedTuple, Protocol, Sequence

import numpy as np

from ..errors import InvalidInput

CAPACITY_LIMIT = 10 ** 7


class Algorithm(str, Enum):
    TABULAR_Q = "tabular_q"
    POLICY_GRADIENT = "policy_gradient"


class Paradigm(str, Enum):
    CTCE = "ctce"
    CTDE = "ctde"


@dataclass(frozen=True)
class LearnerConfig:
    algorithm: Algorithm = Algorithm.TABULAR_Q
    paradigm: Paradigm = Paradigm.CTCE
    gamma: float = 0.99
    learning_rate: float | None = None  # 0.1 for tabular Q, 3e-3 for policy gradient
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_steps: int | None = None  # None: half of the training budget
    clip_ratio: float = 0.2
    rollout_horizon: int = 256
    hidden_width: int = 32
    pg_epochs: int = 4
    seed: int = 0
    eval_episodes: int = 20
    eval_interval: int | None = None  # None: max(budget // 100, 500)

    def __post_init__(self) -> None:
        object.__setattr__(self, "algorithm", Algorithm(self.algorithm))
        object.__setattr__(self, "paradigm", Paradigm(self.paradigm))
        if not 0.0 < self.gamma <= 1.0:
            raise InvalidInput("gamma must lie in (0, 1]")
        for eps in (self.epsilon_start, self.epsilon_end):
            if not 0.0 <= eps <= 1.0:
                raise InvalidInput("epsilon must lie in [0, 1]")
        if self.clip_ratio <= 0:
            raise InvalidInput("clip_ratio must be > 0")
        if self.eval_episodes < 1 or self.rollout_horizon < 1 or self.hidden_width < 1:
            raise InvalidInput("eval_episodes, rollout_horizon and hidden_width must be >= 1")

    @property
    def lr(self) -> float:
        if self.learning_rate is not None:
            return self.learning_rate
        return 0.1 if self.algorithm is Algorithm.TABULAR_Q else 3e-3

    def interval(self, budget: int) -> int:
        return self.eval_interval or max(budget // 100, 500)

    def epsilon(self, t: int, horizon: int) -> float:
        decay = self.epsilon_decay_steps or max(horizon // 2, 1)
        frac = min(t / decay, 1.0)
        return self.epsilon_start + frac * (self.epsilon_end - self.epsilon_start)


class CurvePoint(NamedTuple):
    timestep: int
    avg_reward: float
    avg_episode_length: float
    success_rate: float


class EvalResult(NamedTuple):
    avg_reward: float
    avg_episode_length: float
    success_rate: float


@dataclass
class TrialResult:
    avg_reward: float
    avg_episode_length: float
    success_rate: float
    steps_to_first_success: float  # math.inf when never reached
    total_timesteps: int
    seed: int
    curve: list[CurvePoint] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["curve"] = [list(p) for p in self.curve]
        return d


class Policy(Protocol):
    def act(self, env: Any, state: Any) -> tuple[int, ...]: ...


def evaluate(policy: Policy, env: Any, n_episodes: int, seed: int) -> EvalResult:
    """Greedy rollouts on an independent copy of ``env``.

    Rewards are the system totals (summed over agents) and include whatever
    a governance wrapper adds.
    """
    if n_episodes < 1:
        raise InvalidInput("n_episodes must be >= 1")
    eval_env = env.spawn(seed)
    # a deterministic env under a greedy policy repeats the same episode
    distinct = 1 if eval_env.is_deterministic else n_episodes
    rewards, lengths, successes = [], [], []
    for _ in range(distinct):
        state = eval_env.reset()
        total, steps, success, done = 0.0, 0, False, False
        while not done:
            state, r, done, info = eval_env.step(state, policy.act(eval_env, state))
            total += float(sum(r))
            steps += 1
            success = success or bool(info.get("success"))
        rewards.append(total)
        lengths.append(steps)
        successes.append(float(success))
    return EvalResult(sum(rewards) / distinct, sum(lengths) / distinct, sum(successes) / distinct)


class CurveRecorder:
    """Collects evaluation points and the first timestep a greedy policy succeeds."""

    def __init__(self, config: LearnerConfig, env: Any, budget: int, t0: int = 0,
                 curve: Sequence[CurvePoint] = ()):
        self.config = config
        self.env = env
        self.t0 = t0
        self.end = t0 + budget
        self.interval = config.interval(budget)
        self.curve = list(curve)
        self.first_success = math.inf
        for p in self.curve:
            if p.success_rate > 0:
                self.first_success = min(self.first_success, p.timestep)

    def due(self, t: int) -> bool:
        """``t`` counts completed timesteps overall."""
        return (t - self.t0) % self.interval == 0 or t == self.end

    def record(self, t: int, policy: Policy) -> None:
        seed = self.config.seed * 1_000_003 + t
        res = evaluate(policy, self.env, self.config.eval_episodes, seed)
        self.curve.append(CurvePoint(t, *res))
        if res.success_rate > 0 and t < self.first_success:
            self.first_success = t

    def result(self) -> TrialResult:
        last = self.curve[-1]
        return TrialResult(
            avg_reward=last.avg_reward,
            avg_episode_length=last.avg_episode_length,
            success_rate=last.success_rate,
            steps_to_first_success=self.first_success,
            total_timesteps=self.end,
            seed=self.config.seed,
            curve=list(self.curve),
        )


def joint_actions(n_agents: int, n_actions: int) -> list[tuple[int, ...]]:
    """All joint actions in lexicographic order, agent 0 most significant."""
    out = [()]
    for _ in range(n_agents):
        out = [prev + (a,) for prev in out for a in range(n_actions)]
    return out


def save_npz(path: str | Path, arrays: Mapping[str, np.ndarray]) -> None:
    """Write an ``.npz`` readable by ``np.load`` with fixed zip timestamps.

    ``np.savez`` stamps members with the wall clock, which breaks
    byte-for-byte reproducible output trees.
    """
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.asarray(arrays[name]), allow_pickle=False)
            info = zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0))
            info.compress_type = zipfile.ZIP_DEFLATED
            zf.writestr(info, buf.getvalue())
