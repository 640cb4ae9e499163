"""Two-agent package delivery on a 2D road grid or a 3D drone grid.

Both agents carry a fuel budget too small to move the package from its
start to the goal alone, so the only way to earn the (sparse) goal reward
is to pick the package up, hand it over, and carry it the rest of the way.
"""

from __future__ import annotations

import math
import random
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Sequence

import numpy as np

from ..errors import EpisodeFinished, InvalidInput, LayoutInfeasible
from ..kernel import AnchorContext, Domain

Cell = tuple[int, ...]

MAX_LAYOUT_ATTEMPTS = 10_000


class Randomization(str, Enum):
    FIXED = "fixed"
    RANDOM_INIT = "random_init"
    RANDOM_PER_EPISODE = "random_per_episode"


def move_deltas(ndim: int) -> tuple[Cell, ...]:
    """Unit moves: 2D up/down/left/right, 3D +-x, +-y, +-z."""
    out = []
    for axis in range(ndim):
        for sign in (-1, 1):
            d = [0] * ndim
            d[axis] = sign
            out.append(tuple(d))
    return tuple(out)


@dataclass(frozen=True)
class GridEnvConfig:
    dims: tuple[int, ...] = (5, 5)
    n_agents: int = 2
    agent_starts: tuple[Cell, ...] | None = None
    package_start: Cell | None = None
    goal: Cell | None = None
    n_blockers: int = 0
    randomization: Randomization = Randomization.FIXED
    agent2_delay: int = 0
    fuel: int | None = None
    max_episode_len: int | None = None
    goal_reward: float = 2.5
    layout_seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "randomization", Randomization(self.randomization))
        if self.agent_starts is not None:
            object.__setattr__(self, "agent_starts",
                               tuple(tuple(int(c) for c in s) for s in self.agent_starts))
        for name in ("package_start", "goal"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, tuple(int(c) for c in v))
        if len(self.dims) not in (2, 3) or min(self.dims) < 1:
            raise InvalidInput(f"grid dims must be 2D or 3D and positive, got {self.dims}")
        if self.n_agents != 2:
            raise InvalidInput("the delivery environment has exactly two agents")
        if self.n_blockers < 0 or self.agent2_delay < 0:
            raise InvalidInput("n_blockers and agent2_delay must be >= 0")

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def fuel_budget(self) -> int:
        return self.fuel if self.fuel is not None else math.ceil(0.75 * sum(self.dims))

    @property
    def episode_limit(self) -> int:
        return self.max_episode_len if self.max_episode_len is not None else 10 * sum(self.dims)

    @property
    def n_actions(self) -> int:
        return 2 * self.ndim + 2

    @property
    def stay(self) -> int:
        return 2 * self.ndim

    @property
    def handover(self) -> int:
        return 2 * self.ndim + 1


@dataclass(frozen=True)
class Layout:
    starts: tuple[Cell, ...]
    package: Cell
    goal: Cell
    blockers: frozenset = field(default_factory=frozenset)


@dataclass(frozen=True, slots=True)
class GridEnvState:
    layout: Layout
    positions: tuple[Cell, ...]
    fuel: tuple[int, ...]
    package: Cell | None  # cell while on the ground, None while carried
    holder: int | None
    step: int = 0
    done: bool = False
    delivered: bool = False

    def package_location(self) -> Cell:
        return self.positions[self.holder] if self.holder is not None else self.package


def _in_bounds(cell: Cell, dims: Sequence[int]) -> bool:
    return all(0 <= c < d for c, d in zip(cell, dims))


def manhattan(a: Cell, b: Cell) -> int:
    return sum(abs(x - y) for x, y in zip(a, b))


def bfs_distances(dims: Sequence[int], blockers: frozenset, src: Cell) -> dict[Cell, int]:
    deltas = move_deltas(len(dims))
    dist = {src: 0}
    queue = deque([src])
    while queue:
        cur = queue.popleft()
        for d in deltas:
            nxt = tuple(c + e for c, e in zip(cur, d))
            if nxt not in dist and _in_bounds(nxt, dims) and nxt not in blockers:
                dist[nxt] = dist[cur] + 1
                queue.append(nxt)
    return dist


def monotone_path_exists(dims: Sequence[int], blockers: frozenset, src: Cell, dst: Cell) -> bool:
    """True if a shortest lattice path from ``src`` to ``dst`` avoids all blockers."""
    steps = []
    for axis, (a, b) in enumerate(zip(src, dst)):
        if a != b:
            d = [0] * len(src)
            d[axis] = 1 if b > a else -1
            steps.append(tuple(d))
    reach = {src}
    frontier = [src]
    while frontier:
        nxt_frontier = []
        for cur in frontier:
            for d in steps:
                nxt = tuple(c + e for c, e in zip(cur, d))
                if nxt in reach or nxt in blockers:
                    continue
                # stay inside the src/dst bounding box
                if any(not (min(s, t) <= c <= max(s, t)) for c, s, t in zip(nxt, src, dst)):
                    continue
                reach.add(nxt)
                nxt_frontier.append(nxt)
        frontier = nxt_frontier
    return dst in reach


def layout_problems(config: GridEnvConfig, layout: Layout) -> list[str]:
    """Reasons ``layout`` is unusable; empty when it is valid."""
    dims, fuel = config.dims, config.fuel_budget
    entities = [*layout.starts, layout.package, layout.goal]
    problems = []
    if len(layout.starts) != config.n_agents:
        problems.append("wrong number of agent starts")
    if any(len(c) != len(dims) or not _in_bounds(c, dims) for c in entities):
        return problems + ["entity outside the grid"]
    if len(set(entities)) != len(entities):
        problems.append("starts, package and goal must be pairwise distinct")
    if any(c in layout.blockers for c in entities):
        problems.append("entity placed on a blocker")
    if problems:
        return problems
    if not monotone_path_exists(dims, layout.blockers, layout.package, layout.goal):
        return ["no blocker-free monotone path from package to goal"]
    from_pkg = bfs_distances(dims, layout.blockers, layout.package)
    from_goal = bfs_distances(dims, layout.blockers, layout.goal)
    from_start = [bfs_distances(dims, layout.blockers, s) for s in layout.starts]
    d_pg = from_pkg[layout.goal]
    for i, dist in enumerate(from_start):
        if layout.package not in dist:
            problems.append(f"agent {i} cannot reach the package")
        elif dist[layout.package] + d_pg <= fuel:
            problems.append(f"agent {i} could deliver alone")
    if problems:
        return problems
    feasible = False
    for carrier, receiver in ((0, 1), (1, 0)):
        left = fuel - from_start[carrier][layout.package]
        for meet, d_pm in from_pkg.items():
            if d_pm > left:
                continue
            d_rm = from_start[receiver].get(meet)
            if d_rm is not None and d_rm + from_goal[meet] <= fuel:
                feasible = True
                break
        if feasible:
            break
    if not feasible:
        problems.append("agents cannot complete the delivery together")
    return problems


def canonical_layout(config: GridEnvConfig) -> tuple[tuple[Cell, ...], Cell, Cell]:
    """Package in the origin corner, goal in the far corner.

    Agent 0 starts just far enough from the package that it cannot finish
    alone; agent 1 starts next to the goal.
    """
    dims = config.dims
    package = tuple(0 for _ in dims)
    goal = tuple(d - 1 for d in dims)
    span = sum(d - 1 for d in dims)
    need = max(1, config.fuel_budget - span + 1)
    start0 = list(package)
    for axis in reversed(range(len(dims))):
        take = min(need, dims[axis] - 1)
        start0[axis] += take
        need -= take
    start0 = tuple(start0)
    start1 = None
    for axis in reversed(range(len(dims))):
        cand = list(goal)
        cand[axis] -= 1
        cand = tuple(cand)
        if _in_bounds(cand, dims) and cand not in (start0, package):
            start1 = cand
            break
    if start1 is None or need > 0:
        raise LayoutInfeasible(f"no canonical layout for dims {dims}")
    return (start0, start1), package, goal


def _sample_blockers(config: GridEnvConfig, rng: random.Random, taken: set[Cell]) -> frozenset:
    free = [c for c in np.ndindex(*config.dims) if c not in taken]
    if config.n_blockers > len(free):
        raise LayoutInfeasible("more blockers than free cells")
    return frozenset(rng.sample(free, config.n_blockers))


def fixed_layout(config: GridEnvConfig) -> Layout:
    canon = None
    if config.agent_starts is None or config.package_start is None or config.goal is None:
        canon = canonical_layout(config)
    starts = config.agent_starts if config.agent_starts is not None else canon[0]
    package = config.package_start if config.package_start is not None else canon[1]
    goal = config.goal if config.goal is not None else canon[2]
    rng = random.Random(config.layout_seed)
    for _ in range(MAX_LAYOUT_ATTEMPTS):
        blockers = _sample_blockers(config, rng, {*starts, package, goal})
        layout = Layout(tuple(starts), package, goal, blockers)
        problems = layout_problems(config, layout)
        if not problems:
            return layout
        if config.n_blockers == 0:
            raise LayoutInfeasible("; ".join(problems))
    raise LayoutInfeasible(f"no valid blocker placement after {MAX_LAYOUT_ATTEMPTS} attempts")


def random_layout(config: GridEnvConfig, rng: random.Random) -> Layout:
    cells = list(np.ndindex(*config.dims))
    n_entities = config.n_agents + 2
    if n_entities + config.n_blockers > len(cells):
        raise LayoutInfeasible("grid too small for the requested entities")
    for _ in range(MAX_LAYOUT_ATTEMPTS):
        picked = rng.sample(cells, n_entities + config.n_blockers)
        starts = tuple(picked[:config.n_agents])
        layout = Layout(starts, picked[config.n_agents], picked[config.n_agents + 1],
                        frozenset(picked[n_entities:]))
        if not layout_problems(config, layout):
            return layout
    raise LayoutInfeasible(f"no valid random layout after {MAX_LAYOUT_ATTEMPTS} attempts")


def initial_state(config: GridEnvConfig, layout: Layout) -> GridEnvState:
    return GridEnvState(
        layout=layout,
        positions=layout.starts,
        fuel=(config.fuel_budget,) * config.n_agents,
        package=layout.package,
        holder=None,
    )


class GridDeliveryEnv:
    """Seedable delivery environment; :meth:`step` is pure in ``(state, action)``."""

    kind = "grid"

    def __init__(self, config: GridEnvConfig, seed: int = 0):
        self.config = config
        self.seed = seed
        self._rng = random.Random(seed)
        self._layout: Layout | None = None
        self._deltas = move_deltas(config.ndim)
        self._cells = math.prod(config.dims)
        self._fuel_levels = config.fuel_budget + 1
        if config.randomization is Randomization.FIXED:
            self._layout = fixed_layout(config)

    n_agents = property(lambda self: self.config.n_agents)
    n_actions = property(lambda self: self.config.n_actions)

    @property
    def domain(self) -> Domain:
        return Domain(self.config.dims)

    @property
    def is_deterministic(self) -> bool:
        return self.config.randomization is Randomization.FIXED

    @property
    def max_episode_len(self) -> int:
        return self.config.episode_limit

    def spawn(self, seed: int) -> "GridDeliveryEnv":
        """Independent instance of the same environment with its own seed."""
        return GridDeliveryEnv(self.config, seed)

    def reset(self) -> GridEnvState:
        mode = self.config.randomization
        if mode is Randomization.RANDOM_PER_EPISODE or self._layout is None:
            self._layout = random_layout(self.config, self._rng)
        return initial_state(self.config, self._layout)

    def step(self, state: GridEnvState, joint_action: Sequence[int]):
        cfg = self.config
        if state.done:
            raise EpisodeFinished("step() called on a finished episode")
        if len(joint_action) != cfg.n_agents:
            raise InvalidInput(f"expected {cfg.n_agents} actions, got {len(joint_action)}")
        actions = [int(a) for a in joint_action]
        for a in actions:
            if not 0 <= a < cfg.n_actions:
                raise InvalidInput(f"action {a} out of range")
        if state.step < cfg.agent2_delay:
            actions[1] = cfg.stay
        blockers = state.layout.blockers
        dims = cfg.dims
        positions = list(state.positions)
        fuel = list(state.fuel)
        n_moves = len(self._deltas)
        for i, a in enumerate(actions):
            if a < n_moves and fuel[i] > 0:
                nxt = tuple(c + d for c, d in zip(positions[i], self._deltas[a]))
                if _in_bounds(nxt, dims) and nxt not in blockers:
                    positions[i] = nxt
                    fuel[i] -= 1
                    continue
            if a < n_moves:
                actions[i] = cfg.stay
        package, holder = state.package, state.holder
        picked_up = None
        if holder is None:
            for i, p in enumerate(positions):
                if p == package:
                    holder, package, picked_up = i, None, i
                    break
        handover = None
        if holder is not None and actions[holder] == cfg.handover:
            other = 1 - holder
            if manhattan(positions[holder], positions[other]) <= 1:
                handover = (holder, other)
                holder = other
        step = state.step + 1
        delivered = holder is not None and positions[holder] == state.layout.goal
        truncated = not delivered and step >= cfg.episode_limit
        done = delivered or truncated
        if delivered:
            rewards = (cfg.goal_reward / cfg.n_agents,) * cfg.n_agents
        else:
            rewards = (0.0,) * cfg.n_agents
        new_state = GridEnvState(
            layout=state.layout, positions=tuple(positions), fuel=tuple(fuel),
            package=package, holder=holder, step=step, done=done, delivered=delivered)
        info = {"success": delivered, "truncated": truncated, "picked_up": picked_up,
                "handover": handover, "actions": tuple(actions)}
        return new_state, rewards, done, info

    # -- observations -------------------------------------------------------

    def _cell_index(self, cell: Cell) -> int:
        idx = 0
        for c, d in zip(cell, self.config.dims):
            idx = idx * d + c
        return idx

    def field_cells(self, state: GridEnvState) -> list[int]:
        """Flat index of the cell each agent occupies (governance lookup)."""
        return [self._cell_index(p) for p in state.positions]

    def entered_cells(self, state: GridEnvState, next_state: GridEnvState) -> list[int | None]:
        """Cells agents moved into this step; ``None`` for agents that stayed put."""
        return [self._cell_index(b) if a != b else None
                for a, b in zip(state.positions, next_state.positions)]

    def _layout_suffix(self, key: int, state: GridEnvState) -> int:
        if self.config.randomization is Randomization.FIXED:
            return key
        key = key * self._cells + self._cell_index(state.layout.package)
        return key * self._cells + self._cell_index(state.layout.goal)

    def joint_observation(self, state: GridEnvState) -> int:
        hcode = 0 if state.holder is None else state.holder + 1
        key = self._cell_index(state.positions[0]) * self._cells + self._cell_index(state.positions[1])
        key = (key * self._fuel_levels + state.fuel[0]) * self._fuel_levels + state.fuel[1]
        return self._layout_suffix(key * 3 + hcode, state)

    @property
    def joint_observation_size(self) -> int:
        size = self._cells ** 2 * self._fuel_levels ** 2 * 3
        if self.config.randomization is not Randomization.FIXED:
            size *= self._cells ** 2
        return size

    def agent_observation(self, state: GridEnvState, agent: int) -> int:
        if state.holder is None:
            rel = 0
        else:
            rel = 1 if state.holder == agent else 2
        key = (self._cell_index(state.positions[agent]) * self._fuel_levels + state.fuel[agent]) * 3 + rel
        return self._layout_suffix(key, state)

    @property
    def agent_observation_size(self) -> int:
        size = self._cells * self._fuel_levels * 3
        if self.config.randomization is not Randomization.FIXED:
            size *= self._cells ** 2
        return size

    def _norm(self, cell: Cell) -> list[float]:
        return [c / max(d - 1, 1) for c, d in zip(cell, self.config.dims)]

    def joint_features(self, state: GridEnvState) -> np.ndarray:
        f = self._norm(state.positions[0]) + self._norm(state.positions[1])
        f += [x / self.config.fuel_budget for x in state.fuel]
        f += [float(state.holder is None), float(state.holder == 0), float(state.holder == 1)]
        f += self._norm(state.package_location()) + self._norm(state.layout.goal)
        return np.asarray(f)

    def agent_features(self, state: GridEnvState, agent: int) -> np.ndarray:
        f = self._norm(state.positions[agent]) + [state.fuel[agent] / self.config.fuel_budget]
        f += [float(state.holder is None), float(state.holder == agent),
              float(state.holder is not None and state.holder != agent)]
        f += self._norm(state.package_location()) + self._norm(state.layout.goal)
        return np.asarray(f)

    @property
    def joint_feature_size(self) -> int:
        return 4 * self.config.ndim + 5

    @property
    def agent_feature_size(self) -> int:
        return 3 * self.config.ndim + 4

    def anchor_context(self, state: GridEnvState) -> AnchorContext:
        return AnchorContext(agent_starts=state.layout.starts, goal=state.layout.goal)

    def describe(self, state: GridEnvState) -> dict[str, Any]:
        return {
            "positions": state.positions,
            "fuel": state.fuel,
            "holder": "ground" if state.holder is None else state.holder,
        }


def reset(config: GridEnvConfig, seed: int = 0) -> tuple[GridEnvState, list[int]]:
    """Fresh environment's first state plus per-agent observations."""
    env = GridDeliveryEnv(config, seed)
    state = env.reset()
    return state, [env.agent_observation(state, i) for i in range(config.n_agents)]
