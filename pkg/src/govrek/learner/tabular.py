"""Tabular one-step Q-learning, joint (CTCE) or independent per agent (CTDE)."""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from ..errors import CapacityExceeded
from .common import (
    CAPACITY_LIMIT,
    CurveRecorder,
    LearnerConfig,
    Paradigm,
    TrialResult,
    joint_actions,
    save_npz,
)

POLICY_FORMAT = "govrek.tabular.v1"


class IndependenceMonitor:
    """Counts reads of one agent's parameters on behalf of another agent."""

    def __init__(self) -> None:
        self.foreign_reads = 0

    def reset(self) -> None:
        self.foreign_reads = 0


monitor = IndependenceMonitor()


class AgentTable:
    def __init__(self, owner: int, n_obs: int, n_actions: int, q: np.ndarray | None = None):
        self.owner = owner
        self._q = np.zeros((n_obs, n_actions)) if q is None else q

    def view(self, reader: int) -> np.ndarray:
        if reader != self.owner:
            monitor.foreign_reads += 1
        return self._q


@dataclass
class TabularPolicy:
    paradigm: Paradigm
    n_agents: int
    n_actions: int
    joint_q: dict[int, np.ndarray] | None = None
    tables: list[AgentTable] | None = None
    trained_steps: int = 0
    rng_state: Any = field(default=None, repr=False)

    def __post_init__(self) -> None:
        self._joint = joint_actions(self.n_agents, self.n_actions) if self.paradigm is Paradigm.CTCE else None

    def act(self, env: Any, state: Any) -> tuple[int, ...]:
        if self.paradigm is Paradigm.CTCE:
            row = self.joint_q.get(env.joint_observation(state))
            return self._joint[0 if row is None else int(row.argmax())]
        return tuple(int(self.tables[i].view(i)[env.agent_observation(state, i)].argmax())
                     for i in range(self.n_agents))

    def save(self, path: str | Path) -> None:
        meta = {"format": POLICY_FORMAT, "paradigm": self.paradigm.value,
                "n_agents": self.n_agents, "n_actions": self.n_actions,
                "trained_steps": self.trained_steps}
        arrays: dict[str, np.ndarray] = {"meta": np.array(json.dumps(meta))}
        if self.paradigm is Paradigm.CTCE:
            keys = sorted(self.joint_q)
            arrays["keys"] = np.asarray(keys, dtype=np.int64)
            arrays["rows"] = (np.stack([self.joint_q[k] for k in keys]) if keys
                              else np.zeros((0, len(self._joint))))
        else:
            for i, t in enumerate(self.tables):
                arrays[f"agent_{i}"] = t.view(i)
        save_npz(path, arrays)


def load_tabular(data: Any, meta: dict) -> TabularPolicy:
    paradigm = Paradigm(meta["paradigm"])
    n, na = meta["n_agents"], meta["n_actions"]
    if paradigm is Paradigm.CTCE:
        joint = {int(k): row.copy() for k, row in zip(data["keys"], data["rows"])}
        return TabularPolicy(paradigm, n, na, joint_q=joint, trained_steps=meta["trained_steps"])
    tables = [AgentTable(i, 0, na, q=data[f"agent_{i}"].copy()) for i in range(n)]
    return TabularPolicy(paradigm, n, na, tables=tables, trained_steps=meta["trained_steps"])


def _check_capacity(env: Any, config: LearnerConfig) -> None:
    if config.paradigm is Paradigm.CTCE:
        entries = env.joint_observation_size * env.n_actions ** env.n_agents
    else:
        entries = env.agent_observation_size * env.n_actions
    if entries > CAPACITY_LIMIT:
        raise CapacityExceeded(
            f"tabular {config.paradigm.value} needs {entries:,} entries (limit {CAPACITY_LIMIT:,})")


def train_tabular(
    env: Any,
    config: LearnerConfig,
    budget: int,
    resume: tuple[TabularPolicy, TrialResult] | None = None,
) -> tuple[TabularPolicy, TrialResult]:
    _check_capacity(env, config)
    n, na = env.n_agents, env.n_actions
    rng = random.Random(config.seed)
    if resume is not None:
        policy, prev = resume
        t0, curve = policy.trained_steps, prev.curve
        rng.setstate(policy.rng_state)
    else:
        t0, curve = 0, ()
        if config.paradigm is Paradigm.CTCE:
            policy = TabularPolicy(config.paradigm, n, na, joint_q={})
        else:
            tables = [AgentTable(i, env.agent_observation_size, na) for i in range(n)]
            policy = TabularPolicy(config.paradigm, n, na, tables=tables)
    recorder = CurveRecorder(config, env, budget, t0, curve)
    horizon = t0 + budget
    if config.paradigm is Paradigm.CTCE:
        _run_joint(env, config, policy, rng, t0, budget, horizon, recorder)
    else:
        _run_independent(env, config, policy, rng, t0, budget, horizon, recorder)
    policy.trained_steps = t0 + budget
    policy.rng_state = rng.getstate()
    return policy, recorder.result()


def _greedy(row: np.ndarray, rng: random.Random) -> int:
    """Argmax with uniform tie-breaking, so unexplored rows do not pin action 0."""
    best = row.max()
    ties = np.flatnonzero(row == best)
    return int(ties[0]) if len(ties) == 1 else int(ties[rng.randrange(len(ties))])


def _run_joint(env, config, policy, rng, t0, budget, horizon, recorder) -> None:
    q = policy.joint_q
    acts = policy._joint
    n_joint = len(acts)
    gamma, lr = config.gamma, config.lr
    observe, step_fn = env.joint_observation, env.step
    state = env.reset()
    for t in range(t0, t0 + budget):
        s = observe(state)
        row = q.get(s)
        if row is None:
            row = q[s] = np.zeros(n_joint)
        if rng.random() < config.epsilon(t, horizon):
            a = rng.randrange(n_joint)
        else:
            a = _greedy(row, rng)
        nxt, rewards, done, info = step_fn(state, acts[a])
        target = sum(rewards)
        if not done or info.get("truncated"):
            nrow = q.get(observe(nxt))
            if nrow is not None:
                target += gamma * nrow.max()
        row[a] += lr * (target - row[a])
        state = env.reset() if done else nxt
        if recorder.due(t + 1):
            recorder.record(t + 1, policy)


def _run_independent(env, config, policy, rng, t0, budget, horizon, recorder) -> None:
    n, na = env.n_agents, env.n_actions
    gamma, lr = config.gamma, config.lr
    tables = policy.tables
    observe, step_fn = env.agent_observation, env.step
    state = env.reset()
    for t in range(t0, t0 + budget):
        eps = config.epsilon(t, horizon)
        obs = [observe(state, i) for i in range(n)]
        actions = []
        for i in range(n):
            if rng.random() < eps:
                actions.append(rng.randrange(na))
            else:
                actions.append(_greedy(tables[i].view(i)[obs[i]], rng))
        nxt, rewards, done, info = step_fn(state, actions)
        bootstrap = not done or info.get("truncated")
        for i in range(n):
            qi = tables[i].view(i)
            target = rewards[i]
            if bootstrap:
                target += gamma * qi[observe(nxt, i)].max()
            qi[obs[i], actions[i]] += lr * (target - qi[obs[i], actions[i]])
        state = env.reset() if done else nxt
        if recorder.due(t + 1):
            recorder.record(t + 1, policy)
