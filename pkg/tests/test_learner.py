from __future__ import annotations

import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from govrek.env import DilemmaConfig, DilemmaEnv, GridDeliveryEnv, GridEnvConfig, Randomization, Sparsity
from govrek.errors import CapacityExceeded, InvalidInput
from govrek.learner import LearnerConfig, evaluate, joint_actions, load_policy, train
from govrek.learner.policy_gradient import (
    Batch,
    PolicyNet,
    discounted_returns,
    finite_difference_gradient_check,
    standardize,
    surrogate_grad,
    surrogate_loss,
)
from govrek.learner.tabular import monitor
from govrek.learner.value_iteration import (
    EnumerableMDP,
    bellman_residual,
    delivery_mdp,
    enumerate_env_mdp,
    q_values,
    random_mdp,
    shape_mdp,
    value_iteration,
)


def small_dilemma(**kw):
    return DilemmaEnv(DilemmaConfig(n_agents=3, episode_len=4, **kw))


def random_batch(rng, n=32, n_in=5, n_out=4):
    net = PolicyNet(n_in, 8, n_out, rng)
    net.params["w2"] = rng.normal(0, 0.5, size=net.params["w2"].shape)
    obs = rng.normal(size=(n, n_in))
    actions = rng.integers(0, n_out, size=n)
    old = net.log_prob(obs, actions) + rng.normal(0, 0.1, size=n)
    return net, Batch(obs, actions, old, rng.normal(size=n))


def test_config_defaults_and_validation():
    cfg = LearnerConfig()
    assert cfg.lr == 0.1
    assert LearnerConfig(algorithm="policy_gradient").lr == 3e-3
    assert cfg.interval(100_000) == 1000 and cfg.interval(1000) == 500
    assert cfg.epsilon(0, 100) == 1.0
    assert cfg.epsilon(50, 100) == pytest.approx(0.05)
    assert cfg.epsilon(100, 100) == pytest.approx(0.05)
    with pytest.raises(InvalidInput):
        LearnerConfig(gamma=0.0)
    with pytest.raises(InvalidInput):
        LearnerConfig(epsilon_end=2.0)
    with pytest.raises(InvalidInput):
        train(small_dilemma(), cfg, 0)


def test_joint_actions_lexicographic():
    assert joint_actions(2, 3)[:4] == [(0, 0), (0, 1), (0, 2), (1, 0)]
    assert len(joint_actions(3, 2)) == 8


def test_tabular_ctde_learns_cooperation():
    env = small_dilemma()
    policy, result = train(env, LearnerConfig(paradigm="ctde", eval_episodes=1), 5000)
    assert result.avg_reward == pytest.approx(12.0)
    assert result.success_rate == 1.0
    assert result.total_timesteps == 5000
    assert math.isfinite(result.steps_to_first_success)
    assert [p.timestep for p in result.curve] == list(range(500, 5001, 500))


def test_tabular_ctde_agents_only_read_own_tables():
    monitor.reset()
    train(small_dilemma(), LearnerConfig(paradigm="ctde", eval_episodes=1), 2000)
    assert monitor.foreign_reads == 0


def test_tabular_is_deterministic_per_seed():
    env = GridDeliveryEnv(GridEnvConfig(dims=(3, 3)))
    cfg = LearnerConfig(seed=3, eval_episodes=1)
    _, a = train(env, cfg, 3000)
    _, b = train(env, cfg, 3000)
    assert a.curve == b.curve


def test_tabular_resume_continues(tmp_path):
    env = small_dilemma()
    cfg = LearnerConfig(paradigm="ctde", eval_episodes=1)
    policy, first = train(env, cfg, 1000)
    policy, second = train(env, cfg, 1000, resume=(policy, first))
    assert policy.trained_steps == 2000
    assert second.total_timesteps == 2000
    assert [p.timestep for p in second.curve] == [500, 1000, 1500, 2000]


def test_tabular_capacity_guard():
    env = DilemmaEnv(DilemmaConfig(n_agents=20, episode_len=16))
    with pytest.raises(CapacityExceeded):
        train(env, LearnerConfig(paradigm="ctce"), 10)


def test_policy_save_load_roundtrip(tmp_path):
    env = small_dilemma()
    for algo in ("tabular_q", "policy_gradient"):
        for paradigm in ("ctce", "ctde"):
            cfg = LearnerConfig(algorithm=algo, paradigm=paradigm, eval_episodes=1)
            policy, _ = train(env, cfg, 600)
            path = tmp_path / f"{algo}_{paradigm}.npz"
            policy.save(path)
            loaded = load_policy(path)
            assert evaluate(loaded, env, 1, 0) == evaluate(policy, env, 1, 0)
            policy.save(tmp_path / "again.npz")
            assert (tmp_path / "again.npz").read_bytes() == path.read_bytes()


def test_evaluate_rejects_zero_episodes():
    policy, _ = train(small_dilemma(), LearnerConfig(paradigm="ctde", eval_episodes=1), 500)
    with pytest.raises(InvalidInput):
        evaluate(policy, small_dilemma(), 0, 0)


def test_policy_gradient_learns_dense_dilemma():
    env = small_dilemma(sparsity=Sparsity.BASELINE)
    cfg = LearnerConfig(algorithm="policy_gradient", paradigm="ctde", eval_episodes=1, learning_rate=0.01)
    _, result = train(env, cfg, 6000)
    assert result.avg_reward >= result.curve[0].avg_reward


def test_policy_gradient_joint_cap():
    env = DilemmaEnv(DilemmaConfig(n_agents=13, episode_len=2))
    with pytest.raises(CapacityExceeded):
        train(env, LearnerConfig(algorithm="policy_gradient", paradigm="ctce"), 10)


def test_gradient_check_detects_a_wrong_gradient():
    rng = np.random.default_rng(0)
    net, batch = random_batch(rng)
    assert finite_difference_gradient_check(net, batch) <= 1e-4
    grads = surrogate_grad(net, batch, 0.2)
    loss0 = surrogate_loss(net, batch, 0.2)
    # a small step against the gradient lowers the loss
    for k, g in grads.items():
        net.params[k] = net.params[k] - 1e-3 * g
    assert surrogate_loss(net, batch, 0.2) < loss0
    with pytest.raises(InvalidInput):
        finite_difference_gradient_check(net, batch, epsilon=0.1)


def test_gradient_check_with_active_clipping():
    rng = np.random.default_rng(1)
    net, batch = random_batch(rng)
    batch.old_log_probs = batch.old_log_probs + rng.choice([-1.0, 1.0], size=len(batch.actions))
    ratio = np.exp(net.log_prob(batch.obs, batch.actions) - batch.old_log_probs)
    assert np.any((ratio > 1.2) | (ratio < 0.8))
    assert finite_difference_gradient_check(net, batch) <= 1e-4


def test_discounted_returns_restart_at_episode_end():
    r = np.array([1.0, 1.0, 1.0, 1.0])
    ends = np.array([False, True, False, True])
    assert discounted_returns(r, ends, 0.5) == pytest.approx([1.5, 1.0, 1.5, 1.0])
    x = standardize(np.array([1.0, 2.0, 3.0]))
    assert x.mean() == pytest.approx(0.0) and x.std() == pytest.approx(1.0)
    assert np.all(standardize(np.ones(3)) == 0)


def test_value_iteration_two_state_chain():
    # state 0: action 0 -> terminal with reward 1, action 1 -> state 0 with reward 0
    nxt = np.array([[[1], [0]], [[1], [1]]])
    probs = np.ones((2, 2, 1))
    rew = np.array([[[1.0], [0.0]], [[0.0], [0.0]]])
    mdp = EnumerableMDP(nxt, probs, rew, np.array([False, True]))
    v, greedy = value_iteration(mdp, 0.9)
    assert v == pytest.approx([1.0, 0.0])
    assert greedy[0] == frozenset({0})
    assert greedy[1] == frozenset()


def test_delivery_mdp_3x3():
    env = GridDeliveryEnv(GridEnvConfig(dims=(3, 3)))
    mdp, states = delivery_mdp(env)
    assert mdp.n_states == len(states)
    v, _ = value_iteration(mdp, 0.99)
    assert 0 < v[0] < 2.5
    assert np.max(np.abs(bellman_residual(mdp, v, 0.99))) < 1e-8
    with pytest.raises(InvalidInput):
        delivery_mdp(GridDeliveryEnv(GridEnvConfig(dims=(3, 3), randomization=Randomization.RANDOM_INIT)))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10 ** 6), n=st.integers(2, 30), a=st.integers(1, 4))
def test_property_value_iteration_is_a_fixed_point(seed, n, a):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(rng, n, a)
    v, greedy = value_iteration(mdp, 0.9)
    assert np.max(np.abs(bellman_residual(mdp, v, 0.9))) < 1e-8
    q = q_values(mdp, v, 0.9)
    for s in range(n):
        if not mdp.terminal[s]:
            assert int(np.argmax(q[s])) in greedy[s]


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10 ** 6), gamma=st.floats(0.5, 0.99))
def test_property_shaping_shifts_values_by_potential(seed, gamma):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(rng, 25, 3)
    phi = rng.normal(size=25)
    v, greedy = value_iteration(mdp, gamma)
    vs, greedy_s = value_iteration(shape_mdp(mdp, phi, gamma), gamma)
    live = ~mdp.terminal
    assert np.allclose(vs[live], v[live] - phi[live], atol=1e-7)
    assert greedy == greedy_s


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10 ** 6))
def test_property_gradient_check(seed):
    net, batch = random_batch(np.random.default_rng(seed), n=16)
    assert finite_difference_gradient_check(net, batch) <= 1e-4


class Bandit:
    """One state, two actions paying 0 and 1; every episode lasts one step."""

    n_agents, n_actions = 1, 2
    joint_observation_size = agent_observation_size = 1
    is_deterministic, max_episode_len = True, 1

    def spawn(self, seed):
        return Bandit()

    def reset(self):
        return False

    def joint_observation(self, state):
        return 0

    def agent_observation(self, state, i):
        return 0

    def step(self, state, action):
        return True, (float(action[0]),), True, {"success": action[0] == 1}


class SoloGrid:
    """Single-agent 3x3 walk to the far corner, reward 1 on arrival."""

    n_agents, n_actions = 1, 4
    joint_observation_size = agent_observation_size = 9
    is_deterministic = True
    MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1))

    def __init__(self, limit=30):
        self.max_episode_len = limit

    def spawn(self, seed):
        return SoloGrid(self.max_episode_len)

    def reset(self):
        return SoloState((0, 0), 0, False)

    def joint_observation(self, state):
        return state.pos[0] * 3 + state.pos[1]

    def agent_observation(self, state, i):
        return self.joint_observation(state)

    def step(self, state, action):
        dx, dy = self.MOVES[action[0]]
        pos = (min(2, max(0, state.pos[0] + dx)), min(2, max(0, state.pos[1] + dy)))
        t = state.t + 1
        goal = pos == (2, 2)
        done = goal or t >= self.max_episode_len
        info = {"success": goal, "truncated": done and not goal}
        return SoloState(pos, t, done), (1.0 if goal else 0.0,), done, info


@dataclasses.dataclass(frozen=True)
class SoloState:
    pos: tuple
    t: int
    done: bool


def test_tabular_bandit_picks_better_arm():
    policy, result = train(Bandit(), LearnerConfig(eval_episodes=1), 1000)
    assert policy.act(Bandit(), False) == (1,)
    assert result.avg_reward == 1.0


def test_tabular_matches_value_iteration_on_solo_grid():
    gamma = 0.95
    env = SoloGrid()
    policy, result = train(env, LearnerConfig(gamma=gamma, eval_episodes=1), 20_000)
    assert result.success_rate == 1.0
    mdp, states = enumerate_env_mdp(SoloGrid(10 ** 9), lambda s: (s.pos, s.done))
    _, greedy = value_iteration(mdp, gamma)
    for s, acts in zip(states, greedy):
        if not s.done:
            assert policy.act(env, s)[0] in acts


class Scripted:
    """Replays a fixed joint-action list keyed on the env step counter."""

    def __init__(self, actions):
        self.actions = actions

    def act(self, env, state):
        return self.actions[state.step] if state.step < len(self.actions) else (4, 4)


def test_evaluate_scripted_and_idle_policies():
    env = GridDeliveryEnv(GridEnvConfig(dims=(3, 3)))
    # pick up, hand over next to agent 1, agent 1 walks to the goal
    script = [(2, 2), (2, 4), (1, 4), (5, 4), (4, 3), (4, 3)]
    assert evaluate(Scripted(script), env, 3, 0) == (2.5, 6.0, 1.0)
    assert evaluate(Scripted([]), env, 3, 0) == (0.0, float(env.max_episode_len), 0.0)
