"""The governance layer sitting between agents and an environment.

It never touches transitions or action sets; it only adds reward.  Two
shaping modes are offered:

* ``additive``: an agent receives the (decayed) value of its own field and of
  the shared field at the cell it enters, ``r'_i = r_i + g_i``.  Staying put
  (or bumping into a wall) enters nothing and earns nothing.
* ``potential``: ``r'_i = r_i + gamma * phi_i(s') - phi_i(s)`` with
  ``phi_i`` the agent's composite field, which leaves optimal policies intact.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Sequence

from .env.grid import manhattan
from .errors import DomainMismatch, InvalidInput
from .kernel import KernelSpec, RewardField, apply_decay, build_composite_fields


class ShapingMode(str, Enum):
    ADDITIVE = "additive"
    POTENTIAL = "potential"


MORS_PICKUP = 0.1
MORS_HANDOVER = 0.1
MORS_PROGRESS = 0.02


@dataclass
class GovernanceConfig:
    fields: list[RewardField]
    n_agents: int
    mode: ShapingMode = ShapingMode.ADDITIVE
    gamma: float = 0.99
    _by_owner: dict = field(default=None, repr=False)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        self.mode = ShapingMode(self.mode)
        if not 0.0 < self.gamma <= 1.0:
            raise InvalidInput("gamma must lie in (0, 1]")
        by_owner: dict[int | None, RewardField] = {}
        for f in self.fields:
            if f.owner is not None and not 0 <= f.owner < self.n_agents:
                raise InvalidInput(f"field owned by agent {f.owner} but only {self.n_agents} agents")
            if f.owner in by_owner:
                raise InvalidInput(f"more than one composite field for owner {f.owner}")
            by_owner[f.owner] = f
        self._by_owner = by_owner

    def fields_for(self, agent: int) -> list[RewardField]:
        return [f for f in (self._by_owner.get(agent), self._by_owner.get(None)) if f is not None]

    def fresh(self) -> "GovernanceConfig":
        """Copy with fresh per-episode decay bookkeeping."""
        return GovernanceConfig([f.fresh() for f in self.fields], self.n_agents, self.mode, self.gamma)

    def potential(self, agent: int, cell: int | None) -> float:
        if cell is None:
            return 0.0
        return float(sum(f.values[cell] for f in self.fields_for(agent)))


def potential_shaping(phi_s: float, phi_s_next: float, gamma: float) -> float:
    if not 0.0 < gamma <= 1.0:
        raise InvalidInput("gamma must lie in (0, 1]")
    return gamma * phi_s_next - phi_s


def _check_domain(env: Any, gov: GovernanceConfig) -> None:
    for f in gov.fields:
        if f.domain != env.domain:
            raise DomainMismatch(f"field domain {f.domain.dims} does not match env {env.domain.dims}")


def shaped_step(env: Any, state: Any, joint_action: Sequence[int], gov: GovernanceConfig):
    """Environment step plus governance reward; updates ``gov`` decay in place."""
    next_state, base, done, info = env.step(state, joint_action)
    n = env.n_agents
    added = [0.0] * n
    if gov.mode is ShapingMode.ADDITIVE:
        cells = env.entered_cells(state, next_state)
        for i in range(n):
            if cells[i] is not None:
                added[i] = sum(f.values[cells[i]] * f.visit_decay[cells[i]] for f in gov.fields_for(i))
        # collect first, then decay: shared cells decay once per step however many enter
        shared_seen = set()
        for i in range(n):
            c = cells[i]
            if c is None:
                continue
            for f in gov.fields_for(i):
                if f.owner is None:
                    if c in shared_seen:
                        continue
                    shared_seen.add(c)
                apply_decay(f, c)
        info["potentials"] = None
    else:
        before = env.field_cells(state)
        after = env.field_cells(next_state)
        potentials = []
        for i in range(n):
            phi_s = gov.potential(i, before[i])
            # absorbing terminal states carry zero potential
            phi_next = 0.0 if done else gov.potential(i, after[i])
            added[i] = potential_shaping(phi_s, phi_next, gov.gamma)
            potentials.append((phi_s, phi_next))
        info["potentials"] = tuple(potentials)
    info["base"] = tuple(base)
    info["added"] = tuple(added)
    shaped = tuple(b + a for b, a in zip(base, added))
    return next_state, shaped, done, info


def mors_shaped_step(env: Any, state: Any, joint_action: Sequence[int]):
    """Hand-engineered subtask rewards for the delivery task (pickup, handover, progress)."""
    if getattr(env, "kind", None) != "grid":
        raise DomainMismatch("MORS shaping only applies to the package-delivery environment")
    next_state, base, done, info = env.step(state, joint_action)
    added = [0.0] * env.n_agents
    if info["picked_up"] is not None:
        added[info["picked_up"]] += MORS_PICKUP
    if info["handover"] is not None:
        for i in info["handover"]:
            added[i] += MORS_HANDOVER
    if next_state.holder is not None:
        goal = next_state.layout.goal
        progress = manhattan(state.package_location(), goal) - manhattan(next_state.package_location(), goal)
        added[next_state.holder] += MORS_PROGRESS * progress
    info["base"] = tuple(base)
    info["added"] = tuple(added)
    return next_state, tuple(b + a for b, a in zip(base, added)), done, info


def episode_added_reward(log: Iterable[dict]) -> list[float]:
    """Per-agent sum of the governance-added reward over an episode's info records."""
    totals: list[float] = []
    for info in log:
        added = info.get("added", ())
        if not totals:
            totals = [0.0] * len(added)
        for i, a in enumerate(added):
            totals[i] += a
    return totals


class _EnvWrapper:
    """Delegates everything but ``reset``/``step`` to the wrapped environment."""

    def __init__(self, env: Any):
        self.env = env

    def __getattr__(self, name: str) -> Any:
        if name == "env":
            raise AttributeError(name)
        return getattr(self.env, name)


class GovernedEnv(_EnvWrapper):
    """Environment whose rewards pass through a governance layer.

    Either pass ready-made ``fields`` or kernel ``specs``; specs are rebuilt
    whenever the layout (and so the anchors) changes between episodes.
    """

    def __init__(
        self,
        env: Any,
        fields: Sequence[RewardField] | None = None,
        specs: Sequence[KernelSpec] | None = None,
        mode: ShapingMode | str = ShapingMode.ADDITIVE,
        gamma: float = 0.99,
        seed: int = 0,
    ):
        super().__init__(env)
        if (fields is None) == (specs is None):
            raise InvalidInput("pass exactly one of fields or specs")
        self.mode = ShapingMode(mode)
        self.gamma = gamma
        self.specs = None if specs is None else list(specs)
        self.seed = seed
        self._cache: dict[Any, GovernanceConfig] = {}
        self._template: GovernanceConfig | None = None
        if fields is not None:
            self._template = GovernanceConfig(list(fields), env.n_agents, self.mode, gamma)
            _check_domain(env, self._template)
        self.gov: GovernanceConfig | None = None

    def _template_for(self, state: Any) -> GovernanceConfig:
        if self.specs is None:
            return self._template
        key = getattr(state, "layout", None)
        if key not in self._cache:
            if len(self._cache) >= 256:
                self._cache.clear()
            composites = build_composite_fields(
                self.specs, self.env.domain, self.env.anchor_context(state), self.env.n_agents,
                seed=self.seed)
            gov = GovernanceConfig(list(composites.values()), self.env.n_agents, self.mode, self.gamma)
            _check_domain(self.env, gov)
            self._cache[key] = gov
        return self._cache[key]

    def spawn(self, seed: int) -> "GovernedEnv":
        if self.specs is None:
            return GovernedEnv(self.env.spawn(seed), fields=self._template.fields,
                               mode=self.mode, gamma=self.gamma)
        return GovernedEnv(self.env.spawn(seed), specs=self.specs, mode=self.mode,
                           gamma=self.gamma, seed=self.seed)

    def reset(self) -> Any:
        state = self.env.reset()
        self.gov = self._template_for(state).fresh()
        return state

    def step(self, state: Any, joint_action: Sequence[int]):
        return shaped_step(self.env, state, joint_action, self.gov)


class MorsEnv(_EnvWrapper):
    def __init__(self, env: Any):
        if getattr(env, "kind", None) != "grid":
            raise DomainMismatch("MORS shaping only applies to the package-delivery environment")
        super().__init__(env)

    def spawn(self, seed: int) -> "MorsEnv":
        return MorsEnv(self.env.spawn(seed))

    def reset(self) -> Any:
        return self.env.reset()

    def step(self, state: Any, joint_action: Sequence[int]):
        return mors_shaped_step(self.env, state, joint_action)
