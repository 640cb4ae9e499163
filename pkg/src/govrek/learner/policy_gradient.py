"""A minimal clipped-surrogate policy-gradient learner written directly in numpy.

One tanh hidden layer feeds a softmax over actions.  Advantages are the
discounted episodic returns-to-go, standardized per batch.  All gradients are
analytic so they can be checked against finite differences.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from ..errors import CapacityExceeded, InvalidInput
from .common import CurveRecorder, LearnerConfig, Paradigm, TrialResult, joint_actions, save_npz

POLICY_FORMAT = "govrek.pg.v1"
MAX_JOINT_OUTPUTS = 4096
PARAM_NAMES = ("w1", "b1", "w2", "b2")
GRAD_CHECK_FLOOR = 1e-6


class PolicyNet:
    """Softmax policy ``pi(a|x) = softmax(tanh(x W1 + b1) W2 + b2)``."""

    def __init__(self, n_in: int, n_hidden: int, n_out: int, rng: np.random.Generator | None = None,
                 params: dict[str, np.ndarray] | None = None):
        if params is None:
            rng = rng or np.random.default_rng(0)
            params = {
                "w1": rng.normal(0.0, 1.0 / np.sqrt(n_in), size=(n_in, n_hidden)),
                "b1": np.zeros(n_hidden),
                "w2": rng.normal(0.0, 0.01, size=(n_hidden, n_out)),
                "b2": np.zeros(n_out),
            }
        self.params = params

    def _forward(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        p = self.params
        h = np.tanh(x @ p["w1"] + p["b1"])
        logits = h @ p["w2"] + p["b2"]
        logits = logits - logits.max(axis=-1, keepdims=True)
        e = np.exp(logits)
        return h, e / e.sum(axis=-1, keepdims=True)

    def probs(self, x: np.ndarray) -> np.ndarray:
        return self._forward(np.atleast_2d(x))[1]

    def log_prob(self, x: np.ndarray, actions: np.ndarray) -> np.ndarray:
        probs = self.probs(x)
        return np.log(probs[np.arange(len(actions)), actions])

    def flat(self) -> np.ndarray:
        return np.concatenate([self.params[k].ravel() for k in PARAM_NAMES])

    def set_flat(self, vec: np.ndarray) -> None:
        i = 0
        for k in PARAM_NAMES:
            n = self.params[k].size
            self.params[k] = vec[i:i + n].reshape(self.params[k].shape).copy()
            i += n


@dataclass
class Batch:
    """Observations, actions taken, behaviour log-probs and advantages."""

    obs: np.ndarray
    actions: np.ndarray
    old_log_probs: np.ndarray
    advantages: np.ndarray


def surrogate_loss(net: PolicyNet, batch: Batch, clip: float) -> float:
    """Negative clipped surrogate objective (to be minimized)."""
    ratio = np.exp(net.log_prob(batch.obs, batch.actions) - batch.old_log_probs)
    clipped = np.clip(ratio, 1.0 - clip, 1.0 + clip)
    return float(-np.mean(np.minimum(ratio * batch.advantages, clipped * batch.advantages)))


def surrogate_grad(net: PolicyNet, batch: Batch, clip: float) -> dict[str, np.ndarray]:
    """Analytic gradient of :func:`surrogate_loss` with respect to every parameter."""
    p = net.params
    x, a, adv = batch.obs, batch.actions, batch.advantages
    n = len(a)
    h, probs = net._forward(x)
    ratio = np.exp(np.log(probs[np.arange(n), a]) - batch.old_log_probs)
    # the clipped branch is the minimum (and flat) exactly when it binds
    unclipped = ~(((adv > 0) & (ratio > 1.0 + clip)) | ((adv < 0) & (ratio < 1.0 - clip)))
    coef = np.where(unclipped, -adv * ratio / n, 0.0)
    dlogits = -probs
    dlogits[np.arange(n), a] += 1.0
    dlogits *= coef[:, None]
    dh = (dlogits @ p["w2"].T) * (1.0 - h ** 2)
    return {"w1": x.T @ dh, "b1": dh.sum(axis=0), "w2": h.T @ dlogits, "b2": dlogits.sum(axis=0)}


def finite_difference_gradient_check(net: PolicyNet, batch: Batch, epsilon: float = 1e-5,
                                     clip: float = 0.2) -> float:
    """Max relative error between the analytic and central-difference gradient."""
    if not 1e-8 < epsilon < 1e-2:
        raise InvalidInput("epsilon must lie in (1e-8, 1e-2)")
    analytic = surrogate_grad(net, batch, clip)
    g = np.concatenate([analytic[k].ravel() for k in PARAM_NAMES])
    theta = net.flat()
    numeric = np.empty_like(theta)
    probe = PolicyNet(0, 0, 0, params={k: v.copy() for k, v in net.params.items()})
    for i in range(theta.size):
        plus, minus = theta.copy(), theta.copy()
        plus[i] += epsilon
        minus[i] -= epsilon
        probe.set_flat(plus)
        lp = surrogate_loss(probe, batch, clip)
        probe.set_flat(minus)
        lm = surrogate_loss(probe, batch, clip)
        numeric[i] = (lp - lm) / (2 * epsilon)
    # the floor keeps round-off on vanishing components from reading as large relative error
    denom = np.maximum(np.abs(g) + np.abs(numeric), GRAD_CHECK_FLOOR)
    return float(np.max(np.abs(g - numeric) / denom))


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        for k, g in grads.items():
            m = self.m.setdefault(k, np.zeros_like(g))
            v = self.v.setdefault(k, np.zeros_like(g))
            m[:] = self.beta1 * m + (1 - self.beta1) * g
            v[:] = self.beta2 * v + (1 - self.beta2) * g * g
            m_hat = m / (1 - self.beta1 ** self.t)
            v_hat = v / (1 - self.beta2 ** self.t)
            params[k] = params[k] - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def discounted_returns(rewards: np.ndarray, ends: np.ndarray, gamma: float) -> np.ndarray:
    """Returns-to-go that restart after every index flagged in ``ends``."""
    out = np.zeros(len(rewards))
    running = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        if ends[t]:
            running = 0.0
        running = rewards[t] + gamma * running
        out[t] = running
    return out


def standardize(x: np.ndarray) -> np.ndarray:
    std = x.std()
    return (x - x.mean()) / std if std > 1e-12 else x - x.mean()


@dataclass
class PGPolicy:
    paradigm: Paradigm
    n_agents: int
    n_actions: int
    nets: list[PolicyNet]
    trained_steps: int = 0
    rng_state: Any = field(default=None, repr=False)
    optimizers: list[Adam] = field(default_factory=list, repr=False)

    def __post_init__(self) -> None:
        self._joint = joint_actions(self.n_agents, self.n_actions) if self.paradigm is Paradigm.CTCE else None

    def act(self, env: Any, state: Any) -> tuple[int, ...]:
        if self.paradigm is Paradigm.CTCE:
            probs = self.nets[0].probs(env.joint_features(state))[0]
            return self._joint[int(probs.argmax())]
        return tuple(int(self.nets[i].probs(env.agent_features(state, i))[0].argmax())
                     for i in range(self.n_agents))

    def save(self, path: str | Path) -> None:
        meta = {"format": POLICY_FORMAT, "paradigm": self.paradigm.value, "n_agents": self.n_agents,
                "n_actions": self.n_actions, "trained_steps": self.trained_steps}
        arrays = {"meta": np.array(json.dumps(meta))}
        for i, net in enumerate(self.nets):
            for k in PARAM_NAMES:
                arrays[f"net{i}_{k}"] = net.params[k]
        save_npz(path, arrays)


def load_pg(data: Any, meta: dict) -> PGPolicy:
    paradigm = Paradigm(meta["paradigm"])
    n_nets = 1 if paradigm is Paradigm.CTCE else meta["n_agents"]
    nets = [PolicyNet(0, 0, 0, params={k: data[f"net{i}_{k}"].copy() for k in PARAM_NAMES})
            for i in range(n_nets)]
    return PGPolicy(paradigm, meta["n_agents"], meta["n_actions"], nets,
                    trained_steps=meta["trained_steps"])


def _new_policy(env: Any, config: LearnerConfig, rng: np.random.Generator) -> PGPolicy:
    n, na = env.n_agents, env.n_actions
    if config.paradigm is Paradigm.CTCE:
        n_out = na ** n
        if n_out > MAX_JOINT_OUTPUTS:
            raise CapacityExceeded(f"joint policy would need {n_out:,} outputs (limit {MAX_JOINT_OUTPUTS})")
        nets = [PolicyNet(env.joint_feature_size, config.hidden_width, n_out, rng)]
    else:
        nets = [PolicyNet(env.agent_feature_size, config.hidden_width, na, rng) for _ in range(n)]
    policy = PGPolicy(config.paradigm, n, na, nets)
    policy.optimizers = [Adam(config.lr) for _ in nets]
    return policy


def train_policy_gradient(
    env: Any,
    config: LearnerConfig,
    budget: int,
    resume: tuple[PGPolicy, TrialResult] | None = None,
) -> tuple[PGPolicy, TrialResult]:
    rng = np.random.default_rng(config.seed)
    if resume is not None:
        policy, prev = resume
        t0, curve = policy.trained_steps, prev.curve
        rng.bit_generator.state = policy.rng_state
        if not policy.optimizers:
            policy.optimizers = [Adam(config.lr) for _ in policy.nets]
    else:
        policy = _new_policy(env, config, rng)
        t0, curve = 0, ()
    recorder = CurveRecorder(config, env, budget, t0, curve)
    ctce = config.paradigm is Paradigm.CTCE
    n = env.n_agents
    n_heads = len(policy.nets)
    state = env.reset()
    t = t0
    end = t0 + budget
    while t < end:
        horizon = min(config.rollout_horizon, end - t)
        obs = [[] for _ in range(n_heads)]
        acts = [[] for _ in range(n_heads)]
        logps = [[] for _ in range(n_heads)]
        rews = [[] for _ in range(n_heads)]
        ends = []
        for _ in range(horizon):
            if ctce:
                x = env.joint_features(state)
                p = policy.nets[0].probs(x)[0]
                a = int(rng.choice(len(p), p=p))
                obs[0].append(x)
                acts[0].append(a)
                logps[0].append(np.log(p[a]))
                joint = policy._joint[a]
            else:
                joint = []
                for i in range(n):
                    x = env.agent_features(state, i)
                    p = policy.nets[i].probs(x)[0]
                    a = int(rng.choice(len(p), p=p))
                    obs[i].append(x)
                    acts[i].append(a)
                    logps[i].append(np.log(p[a]))
                    joint.append(a)
            state, rewards, done, _info = env.step(state, joint)
            if ctce:
                rews[0].append(sum(rewards))
            else:
                for i in range(n):
                    rews[i].append(rewards[i])
            ends.append(done)
            t += 1
            if done:
                state = env.reset()
            if recorder.due(t):
                recorder.record(t, policy)
        ends_arr = np.asarray(ends)
        for i in range(n_heads):
            adv = standardize(discounted_returns(np.asarray(rews[i]), ends_arr, config.gamma))
            batch = Batch(np.asarray(obs[i]), np.asarray(acts[i]), np.asarray(logps[i]), adv)
            net, opt = policy.nets[i], policy.optimizers[i]
            for _ in range(config.pg_epochs):
                opt.step(net.params, surrogate_grad(net, batch, config.clip_ratio))
    policy.trained_steps = end
    policy.rng_state = rng.bit_generator.state
    return policy, recorder.result()
