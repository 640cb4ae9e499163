"""Governance kernels: parametric reward fields over grid states or joint actions.

A :class:`KernelSpec` is a declarative description; :func:`build_reward_field`
evaluates it on every cell of a :class:`Domain` against a single reference
point and returns a raw :class:`RewardField`.  Fields are then normalized
(:func:`normalize_field`) so that the extra reward a kernel can hand out is
bounded by ``1 / n_agents``, superimposed, mutated and decayed.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np
import yaml

from .errors import DegenerateField, DomainMismatch, InvalidInput, MissingContext


class Family(str, Enum):
    LINEAR = "linear"
    PERIODIC = "periodic"
    SQUARED_EXPONENTIAL = "squared_exponential"
    DIAGONAL = "diagonal"
    ELLIPSOID = "ellipsoid"
    HYPERBOLOID = "hyperboloid"


class SignMode(str, Enum):
    ALL_POSITIVE = "all_positive"
    ZERO_MEAN = "zero_mean"


PLANAR_FAMILIES = (Family.LINEAR, Family.PERIODIC, Family.SQUARED_EXPONENTIAL)
SURFACE_FAMILIES = (Family.DIAGONAL, Family.ELLIPSOID, Family.HYPERBOLOID)

ANCHORS = ("agent_start", "goal", "origin")
DECAY_CHOICES = (1.0, 0.5, 0.25, 0.0)

# tolerance for "on the surface" when band_width == 0
_SURFACE_EPS = 1e-9


@dataclass(frozen=True)
class KernelSpec:
    family: Family
    agent_id: int | None = None  # None: agent-agnostic (shared) kernel
    sigma: float = 1.0
    length_scale: float = 1.0
    period: float = 2.0
    offset_c: float = 0.0
    semi_axes: tuple[float, float, float] = (1.0, 1.0, 1.0)
    band_width: float = 1.0
    anchor: str | tuple[float, ...] = "goal"
    sign_mode: SignMode = SignMode.ALL_POSITIVE
    decay: float = 1.0
    noise_std: float = 0.0
    periodic_standard_form: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "family", Family(self.family))
        object.__setattr__(self, "sign_mode", SignMode(self.sign_mode))
        object.__setattr__(self, "semi_axes", tuple(float(a) for a in self.semi_axes))
        if not isinstance(self.anchor, str):
            object.__setattr__(self, "anchor", tuple(float(v) for v in self.anchor))
        elif self.anchor not in ANCHORS:
            raise InvalidInput(f"unknown anchor {self.anchor!r}")
        reals = [self.sigma, self.length_scale, self.period, self.offset_c,
                 *self.semi_axes, self.band_width, self.decay, self.noise_std]
        if not all(math.isfinite(v) for v in reals):
            raise InvalidInput("kernel parameters must be finite")
        if min(self.sigma, self.length_scale, self.period, *self.semi_axes) <= 0:
            raise InvalidInput("sigma, length_scale, period and semi_axes must be > 0")
        if len(self.semi_axes) != 3:
            raise InvalidInput("semi_axes needs exactly three entries")
        if self.band_width < 0 or self.noise_std < 0:
            raise InvalidInput("band_width and noise_std must be >= 0")
        if not 0.0 <= self.decay <= 1.0:
            raise InvalidInput("decay must lie in [0, 1]")
        if self.agent_id is not None and self.agent_id < 0:
            raise InvalidInput("agent_id must be non-negative")
        if self.anchor == "agent_start" and self.agent_id is None:
            raise InvalidInput("agent-agnostic kernels cannot anchor at an agent start")

    @property
    def is_agent_specific(self) -> bool:
        return self.agent_id is not None

    @property
    def scope(self) -> str:
        return "agnostic" if self.agent_id is None else f"agent:{self.agent_id}"

    def to_dict(self) -> dict[str, Any]:
        return {
            "family": self.family.value,
            "scope": self.scope,
            "sigma": self.sigma,
            "length_scale": self.length_scale,
            "period": self.period,
            "offset_c": self.offset_c,
            "semi_axes": list(self.semi_axes),
            "band_width": self.band_width,
            "anchor": self.anchor if isinstance(self.anchor, str) else list(self.anchor),
            "sign_mode": self.sign_mode.value,
            "decay": self.decay,
            "noise_std": self.noise_std,
            "periodic_standard_form": self.periodic_standard_form,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "KernelSpec":
        data = dict(data)
        scope = data.pop("scope", "agnostic")
        if "agent_id" not in data:
            data["agent_id"] = _parse_scope(scope)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InvalidInput(f"unknown kernel spec keys: {sorted(unknown)}")
        if "anchor" in data and isinstance(data["anchor"], list):
            data["anchor"] = tuple(data["anchor"])
        if "family" not in data:
            raise InvalidInput("kernel spec needs a family")
        return cls(**data)


def _parse_scope(scope: Any) -> int | None:
    if scope is None or scope == "agnostic":
        return None
    if isinstance(scope, int):
        return scope
    if isinstance(scope, str) and scope.startswith("agent:"):
        return int(scope.split(":", 1)[1])
    raise InvalidInput(f"bad scope {scope!r}; use 'agnostic' or 'agent:<id>'")


def dump_spec(spec: KernelSpec, path: str | Path) -> None:
    path = Path(path)
    data = spec.to_dict()
    if path.suffix in (".yaml", ".yml"):
        path.write_text(yaml.safe_dump(data, sort_keys=False))
    else:
        path.write_text(json.dumps(data, indent=2) + "\n")


def load_spec(path: str | Path) -> KernelSpec:
    text = Path(path).read_text()
    data = yaml.safe_load(text)  # JSON is a subset of YAML
    return KernelSpec.from_dict(data)


@dataclass(frozen=True)
class Domain:
    """Grid dims ``(l, w[, h])`` or a flattened joint-action space ``(size,)``."""

    dims: tuple[int, ...]
    kind: str = "grid"

    def __post_init__(self) -> None:
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        if not self.dims or min(self.dims) < 1:
            raise InvalidInput(f"bad domain dims {self.dims}")
        if self.kind not in ("grid", "joint_action"):
            raise InvalidInput(f"bad domain kind {self.kind!r}")

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def size(self) -> int:
        return math.prod(self.dims)

    def cells(self) -> np.ndarray:
        """All cell coordinates in C order, shape ``(size, ndim)``."""
        grids = np.indices(self.dims).reshape(self.ndim, -1)
        return grids.T.astype(float)

    def index(self, cell: int | Sequence[int]) -> int:
        if isinstance(cell, (int, np.integer)):
            if not 0 <= cell < self.size:
                raise DomainMismatch(f"cell index {cell} outside domain of size {self.size}")
            return int(cell)
        cell = tuple(int(c) for c in cell)
        if len(cell) != self.ndim or any(not 0 <= c < d for c, d in zip(cell, self.dims)):
            raise DomainMismatch(f"cell {cell} outside domain {self.dims}")
        return int(np.ravel_multi_index(cell, self.dims))


@dataclass(frozen=True)
class AnchorContext:
    """Reference points a kernel may anchor to."""

    agent_starts: tuple[tuple[int, ...], ...] | None = None
    goal: tuple[int, ...] | None = None


def check_family_domain(family: Family, ndim: int) -> None:
    if family in SURFACE_FAMILIES and ndim != 3:
        raise DomainMismatch(f"{family.value} kernel needs a 3D domain, got {ndim}D")
    if family in PLANAR_FAMILIES and ndim not in (1, 2):
        raise DomainMismatch(f"{family.value} kernel needs a 1D or 2D domain, got {ndim}D")


def _surface_values(spec: KernelSpec, rel: np.ndarray) -> np.ndarray:
    s2 = spec.sigma ** 2
    if spec.family is Family.DIAGONAL:
        u = np.ones(3) / math.sqrt(3.0)
        proj = rel @ u
        dist = np.linalg.norm(rel - proj[:, None] * u, axis=1)
    else:
        a = np.asarray(spec.semi_axes)
        signs = np.array([1.0, 1.0, -1.0 if spec.family is Family.HYPERBOLOID else 1.0])
        implicit = (signs * (rel / a) ** 2).sum(axis=1) - 1.0
        grad = np.linalg.norm(2.0 * signs * rel / a ** 2, axis=1)
        # first-order (Sampson) distance to the implicit surface
        with np.errstate(divide="ignore", invalid="ignore"):
            dist = np.where(grad > 0, np.abs(implicit) / grad, np.inf)
        dist = np.where(np.abs(implicit) <= _SURFACE_EPS, 0.0, dist)
    if spec.band_width == 0:
        return np.where(dist <= _SURFACE_EPS, s2, 0.0)
    return s2 * np.clip(1.0 - dist / spec.band_width, 0.0, 1.0)


def _eval_points(spec: KernelSpec, points: np.ndarray, ref: np.ndarray) -> np.ndarray:
    check_family_domain(spec.family, points.shape[1])
    if not (np.all(np.isfinite(points)) and np.all(np.isfinite(ref))):
        raise InvalidInput("kernel inputs must be finite")
    s2 = spec.sigma ** 2
    fam = spec.family
    if fam is Family.LINEAR:
        return s2 * ((points - spec.offset_c) * (ref - spec.offset_c)).sum(axis=1)
    if fam in SURFACE_FAMILIES:
        return _surface_values(spec, points - ref)
    sq = ((points - ref) ** 2).sum(axis=1)
    if fam is Family.SQUARED_EXPONENTIAL:
        return s2 * np.exp(-sq / (2.0 * spec.length_scale ** 2))
    arg = np.sqrt(sq) if spec.periodic_standard_form else sq
    return s2 * np.exp(-2.0 * np.sin(math.pi * arg / spec.period) ** 2 / spec.length_scale ** 2)


def eval_kernel(spec: KernelSpec, x: Sequence[float], x_ref: Sequence[float]) -> float:
    """Raw, noise-free kernel value at ``x`` for reference point ``x_ref``."""
    xa = np.atleast_1d(np.asarray(x, dtype=float))
    ra = np.atleast_1d(np.asarray(x_ref, dtype=float))
    if xa.ndim != 1 or xa.shape != ra.shape:
        raise DomainMismatch(f"point shapes differ: {xa.shape} vs {ra.shape}")
    return float(_eval_points(spec, xa[None, :], ra)[0])


@dataclass(eq=False)
class RewardField:
    domain: Domain
    owner: int | None  # None: shared field
    values: np.ndarray
    normalized_for: int | None = None
    sign_mode: SignMode | None = None
    decay: float = 1.0
    visit_decay: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float).ravel()
        if self.values.size != self.domain.size:
            raise DomainMismatch(
                f"field has {self.values.size} values for a domain of size {self.domain.size}")
        if self.visit_decay is None:
            self.visit_decay = np.ones(self.domain.size)

    def value(self, cell: int | Sequence[int]) -> float:
        """Effective (decayed) value at ``cell``."""
        i = self.domain.index(cell)
        return float(self.values[i] * self.visit_decay[i])

    def effective(self) -> np.ndarray:
        return self.values * self.visit_decay

    def fresh(self) -> "RewardField":
        """Copy with the visit bookkeeping reset, for a new episode or trial."""
        return dataclasses.replace(self, values=self.values.copy(), visit_decay=None)


def resolve_anchor(spec: KernelSpec, domain: Domain, context: AnchorContext | None) -> np.ndarray:
    anchor = spec.anchor
    if not isinstance(anchor, str):
        ref = np.asarray(anchor, dtype=float)
    elif anchor == "origin":
        ref = np.zeros(domain.ndim)
    elif anchor == "goal":
        if context is None or context.goal is None:
            raise MissingContext("anchor 'goal' needs a goal in the context")
        ref = np.asarray(context.goal, dtype=float)
    else:
        starts = None if context is None else context.agent_starts
        if starts is None or spec.agent_id is None or spec.agent_id >= len(starts):
            raise MissingContext(f"anchor 'agent_start' needs a start for agent {spec.agent_id}")
        ref = np.asarray(starts[spec.agent_id], dtype=float)
    ref = np.atleast_1d(ref)
    if ref.shape != (domain.ndim,):
        raise DomainMismatch(f"anchor {tuple(ref)} does not fit a {domain.ndim}D domain")
    return ref


def build_reward_field(
    spec: KernelSpec,
    domain: Domain,
    context: AnchorContext | None = None,
    seed: int = 0,
) -> RewardField:
    """Evaluate ``spec`` on every cell of ``domain`` (raw, unnormalized)."""
    ref = resolve_anchor(spec, domain, context)
    values = _eval_points(spec, domain.cells(), ref)
    if spec.noise_std > 0:
        rng = np.random.default_rng(seed)
        values = values + rng.uniform(-spec.noise_std, spec.noise_std, size=values.shape)
    return RewardField(domain=domain, owner=spec.agent_id, values=values, decay=spec.decay)


def normalize_field(field: RewardField, n_agents: int, sign_mode: SignMode | str) -> RewardField:
    """Scale so the field sums to ``1/n_agents`` (all-positive) or to 0 (zero-mean)."""
    if n_agents < 1:
        raise InvalidInput("n_agents must be positive")
    sign_mode = SignMode(sign_mode)
    values = field.values.astype(float)
    lo = values.min()
    if lo < 0:
        values = values - lo
    total = values.sum()
    if not total > 0 or not math.isfinite(total):
        raise DegenerateField("field sums to zero; nothing to normalize")
    values = values / (total * n_agents)
    if sign_mode is SignMode.ZERO_MEAN:
        values = values - values.mean()
    return dataclasses.replace(
        field, values=values, normalized_for=n_agents, sign_mode=sign_mode, visit_decay=None)


def superimpose(
    fields: Sequence[RewardField],
    n_agents: int,
    sign_mode: SignMode | str | None = None,
) -> RewardField:
    """Element-wise sum of same-domain, same-owner fields, renormalized."""
    if not fields:
        raise InvalidInput("nothing to superimpose")
    first = fields[0]
    for f in fields[1:]:
        if f.domain != first.domain or f.owner != first.owner:
            raise DomainMismatch("superimposed fields must share domain and owner")
    if sign_mode is None:
        sign_mode = first.sign_mode or SignMode.ALL_POSITIVE
    summed = np.sum([f.values for f in fields], axis=0)
    # the composite decays as fast as its fastest-decaying component
    decay = min(f.decay for f in fields)
    merged = RewardField(domain=first.domain, owner=first.owner, values=summed, decay=decay)
    return normalize_field(merged, n_agents, sign_mode)


def apply_decay(field: RewardField, cell: int | Sequence[int]) -> RewardField:
    """Record one visit of ``cell``; later reads there are scaled by ``field.decay``."""
    i = field.domain.index(cell)
    field.visit_decay[i] *= field.decay
    return field


_MUTABLE_PARAMS = {
    Family.LINEAR: ("sigma", "offset_c", "decay"),
    Family.PERIODIC: ("sigma", "length_scale", "period", "decay"),
    Family.SQUARED_EXPONENTIAL: ("sigma", "length_scale", "decay"),
    Family.DIAGONAL: ("sigma", "band_width", "decay"),
    Family.ELLIPSOID: ("sigma", "semi_axes.0", "semi_axes.1", "semi_axes.2", "band_width", "decay"),
    Family.HYPERBOLOID: ("sigma", "semi_axes.0", "semi_axes.1", "semi_axes.2", "band_width", "decay"),
}

_BOUNDS = {
    "sigma": (1e-3, 1e3),
    "length_scale": (1e-3, 1e3),
    "period": (1e-3, 1e6),
    "semi_axes": (1e-3, 1e3),
    "band_width": (0.0, 1e3),
    "decay": (0.0, 1.0),
    "offset_c": (-1e6, 1e6),
}


def mutable_parameters(family: Family) -> tuple[str, ...]:
    return _MUTABLE_PARAMS[Family(family)]


def mutate(spec: KernelSpec, rng: np.random.Generator, m: float) -> KernelSpec:
    """With probability ``m`` rescale one family-relevant parameter by U[0.5, 2]."""
    if not 0.0 <= m <= 1.0:
        raise InvalidInput("mutation probability must lie in [0, 1]")
    if rng.random() >= m:
        return spec
    names = mutable_parameters(spec.family)
    name = names[int(rng.integers(len(names)))]
    factor = float(rng.uniform(0.5, 2.0))
    base, _, idx = name.partition(".")
    lo, hi = _BOUNDS[base]
    if idx:
        axes = list(spec.semi_axes)
        axes[int(idx)] = float(np.clip(axes[int(idx)] * factor, lo, hi))
        return dataclasses.replace(spec, semi_axes=tuple(axes))
    new = float(np.clip(getattr(spec, base) * factor, lo, hi))
    return dataclasses.replace(spec, **{base: new})


def admissible_families(domain: Domain) -> tuple[Family, ...]:
    return SURFACE_FAMILIES if domain.ndim == 3 else PLANAR_FAMILIES


def sample_kernel_population(
    n: int,
    domain: Domain,
    rng: np.random.Generator,
    scopes: Iterable[int | None] | None = None,
    n_agents: int = 2,
    sign_mode: SignMode | str = SignMode.ALL_POSITIVE,
) -> list[KernelSpec]:
    """Draw ``n`` specs over the families admissible for ``domain``.

    Scopes cycle through ``scopes`` (default: one agent-specific slot per agent
    followed by one agnostic slot), so populations stay balanced.
    """
    if n < 1:
        raise InvalidInput("population size must be >= 1")
    if scopes is None:
        scopes = [None] if domain.kind == "joint_action" else [*range(n_agents), None]
    scopes = list(scopes)
    families = admissible_families(domain)
    max_dim = max(domain.dims)
    out = []
    for k in range(n):
        agent_id = scopes[k % len(scopes)]
        family = families[int(rng.integers(len(families)))]
        if agent_id is not None:
            anchor: str = "agent_start"
        else:
            anchor = ("goal", "origin")[int(rng.integers(2))]
        if domain.ndim == 3:
            axes = tuple(float(rng.uniform(1.0, d)) for d in domain.dims)
        else:
            axes = (1.0, 1.0, 1.0)
        out.append(KernelSpec(
            family=family,
            agent_id=agent_id,
            sigma=float(rng.uniform(0.5, 2.0)),
            length_scale=float(rng.uniform(0.5, max(max_dim, 0.5))),
            period=float(rng.uniform(2.0, max(max_dim, 2.0))),
            offset_c=float(rng.uniform(-1.0, 0.0)),
            semi_axes=axes,
            anchor=anchor,
            sign_mode=SignMode(sign_mode),
            decay=float(DECAY_CHOICES[int(rng.integers(len(DECAY_CHOICES)))]),
        ))
    return out


def build_composite_fields(
    specs: Sequence[KernelSpec],
    domain: Domain,
    context: AnchorContext | None,
    n_agents: int,
    seed: int = 0,
) -> dict[int | None, RewardField]:
    """Build, group by owner and superimpose: one normalized field per owner."""
    grouped: dict[int | None, list[RewardField]] = {}
    modes: dict[int | None, SignMode] = {}
    for k, spec in enumerate(specs):
        if spec.agent_id is not None and spec.agent_id >= n_agents:
            raise InvalidInput(f"kernel for agent {spec.agent_id} but only {n_agents} agents")
        raw = build_reward_field(spec, domain, context, seed=seed + k)
        grouped.setdefault(spec.agent_id, []).append(raw)
        modes.setdefault(spec.agent_id, spec.sign_mode)
    return {owner: superimpose(fs, n_agents, modes[owner]) for owner, fs in grouped.items()}
