"""Experiment config files (YAML or JSON) and the objects they describe.

A config names one environment, one learner, a training budget and a seed
list, plus exactly one reward treatment: ``governance: none``,
``governance: mors``, a governance mapping with kernels, or a ``search``
section that lets the scheduler pick the kernels.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from ..env import DilemmaConfig, DilemmaEnv, GridDeliveryEnv, GridEnvConfig
from ..errors import ConfigError, GovRekError
from ..governance import GovernedEnv, MorsEnv, ShapingMode
from ..kernel import KernelSpec, SignMode, check_family_domain, load_spec
from ..learner import LearnerConfig
from ..scheduler import SelectionMode

ENV_KINDS = ("grid2d", "grid3d", "dilemma")
TOP_KEYS = {"name", "env", "governance", "learner", "budget", "seeds", "output_dir",
            "eval_episodes", "search"}


@dataclass(frozen=True)
class GovernanceSection:
    specs: tuple[KernelSpec, ...]
    mode: ShapingMode = ShapingMode.ADDITIVE
    gamma: float = 0.99


@dataclass(frozen=True)
class SearchSection:
    T: int = 27
    N_r: int = 1
    eta: int = 3
    t_k: int = 3
    unit: int = 1000
    m: float = 0.5
    s_prob: float = 0.5
    kernels_per_config: int = 3
    sign_mode: SignMode = SignMode.ALL_POSITIVE
    mode: ShapingMode = ShapingMode.ADDITIVE
    gamma: float = 0.99
    selection: SelectionMode = SelectionMode.LEXICOGRAPHIC
    resume: bool = True


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    env_kind: str
    env: GridEnvConfig | DilemmaConfig
    learner: LearnerConfig
    budget: int
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    treatment: str = "none"  # none | mors | governed | search
    governance: GovernanceSection | None = None
    search: SearchSection | None = None
    output_dir: str = "runs/experiment"
    raw: dict = field(default_factory=dict, compare=False, repr=False)

    def config_hash(self) -> str:
        blob = json.dumps(self.raw, sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(blob.encode()).hexdigest()

    def make_env(self, seed: int):
        return make_env(self.env_kind, self.env, seed)

    def make_treated_env(self, seed: int):
        return treat_env(self.make_env(seed), self.treatment, self.governance, seed)


def make_env(kind: str, cfg, seed: int):
    if kind == "dilemma":
        return DilemmaEnv(cfg, seed)
    return GridDeliveryEnv(cfg, seed)


def treat_env(env, treatment: str, gov: GovernanceSection | None, seed: int):
    if treatment == "mors":
        return MorsEnv(env)
    if treatment == "governed":
        return GovernedEnv(env, specs=gov.specs, mode=gov.mode, gamma=gov.gamma, seed=seed)
    return env


def _section(data: Any, path: str) -> dict:
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(path, "expected a mapping")
    return dict(data)


def _build(cls, data: dict, path: str):
    known = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError(f"{path}.{key}", "unknown key")
    try:
        return cls(**data)
    except GovRekError as exc:
        raise ConfigError(path, str(exc)) from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(path, str(exc)) from exc


def _parse_env(data: dict) -> tuple[str, GridEnvConfig | DilemmaConfig]:
    kind = data.pop("kind", "grid2d")
    if kind not in ENV_KINDS:
        raise ConfigError("env.kind", f"must be one of {ENV_KINDS}")
    if kind == "dilemma":
        return kind, _build(DilemmaConfig, data, "env")
    data.setdefault("dims", [5, 5] if kind == "grid2d" else [3, 3, 3])
    want = 2 if kind == "grid2d" else 3
    if not isinstance(data["dims"], (list, tuple)) or len(data["dims"]) != want:
        raise ConfigError("env.dims", f"{kind} needs {want} dimensions")
    return kind, _build(GridEnvConfig, data, "env")


def _parse_kernels(items: Any, base_dir: Path, defaults: dict, ndim: int, path: str) -> tuple[KernelSpec, ...]:
    if not isinstance(items, list) or not items:
        raise ConfigError(path, "expected a non-empty list of kernel specs")
    specs = []
    for i, item in enumerate(items):
        p = f"{path}[{i}]"
        try:
            if isinstance(item, str) or (isinstance(item, dict) and set(item) == {"file"}):
                ref = item if isinstance(item, str) else item["file"]
                spec = load_spec(base_dir / ref)
            elif isinstance(item, dict):
                d = {**defaults, **item}
                spec = KernelSpec.from_dict(d)
            else:
                raise ConfigError(p, "expected a mapping or a file reference")
            check_family_domain(spec.family, ndim)
        except ConfigError:
            raise
        except (GovRekError, OSError, TypeError, ValueError) as exc:
            raise ConfigError(p, str(exc)) from exc
        specs.append(spec)
    return tuple(specs)


def parse_config(data: dict, base_dir: str | Path = ".") -> ExperimentConfig:
    """Validate a raw config mapping; errors name the offending field path."""
    if not isinstance(data, dict):
        raise ConfigError("<root>", "config must be a mapping")
    for key in data:
        if key not in TOP_KEYS:
            raise ConfigError(key, "unknown key")
    base_dir = Path(base_dir)
    raw = json.loads(json.dumps(data, default=str))
    kind, env_cfg = _parse_env(_section(data.get("env"), "env"))
    ndim = 1 if kind == "dilemma" else len(env_cfg.dims)

    learner_data = _section(data.get("learner"), "learner")
    if "seed" in learner_data:
        raise ConfigError("learner.seed", "seeds come from the top-level seeds list")
    if "eval_episodes" in data:
        learner_data.setdefault("eval_episodes", data["eval_episodes"])
    learner = _build(LearnerConfig, learner_data, "learner")

    budget = data.get("budget", 100_000)
    if not isinstance(budget, int) or budget < 1:
        raise ConfigError("budget", "must be a positive integer")
    seeds = data.get("seeds", [0, 1, 2, 3, 4])
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) for s in seeds):
        raise ConfigError("seeds", "must be a non-empty list of integers")
    if len(set(seeds)) != len(seeds):
        raise ConfigError("seeds", "seeds must be distinct")

    gov_raw = data.get("governance", "none")
    treatment, gov = "none", None
    if isinstance(gov_raw, str):
        if gov_raw not in ("none", "mors"):
            raise ConfigError("governance", "must be 'none', 'mors' or a governance mapping")
        treatment = gov_raw
        if treatment == "mors" and kind == "dilemma":
            raise ConfigError("governance", "MORS shaping only applies to the delivery environment")
    else:
        g = _section(gov_raw, "governance")
        unknown = set(g) - {"mode", "gamma", "sign_mode", "decay", "kernels"}
        if unknown:
            raise ConfigError(f"governance.{sorted(unknown)[0]}", "unknown key")
        defaults = {k: g[k] for k in ("sign_mode", "decay") if k in g}
        specs = _parse_kernels(g.get("kernels"), base_dir, defaults, ndim, "governance.kernels")
        try:
            gov = GovernanceSection(specs, ShapingMode(g.get("mode", "additive")), float(g.get("gamma", 0.99)))
        except ValueError as exc:
            raise ConfigError("governance.mode", str(exc)) from exc
        if not 0.0 < gov.gamma <= 1.0:
            raise ConfigError("governance.gamma", "must lie in (0, 1]")
        treatment = "governed"

    search = None
    if data.get("search") is not None:
        if treatment != "none":
            raise ConfigError("search", "exactly one of governance, mors, none or search may be active")
        search = _build(SearchSection, _section(data["search"], "search"), "search")
        try:
            search = dataclasses.replace(search, sign_mode=SignMode(search.sign_mode),
                                         mode=ShapingMode(search.mode),
                                         selection=SelectionMode(search.selection))
        except ValueError as exc:
            raise ConfigError("search", str(exc)) from exc
        treatment = "search"

    return ExperimentConfig(
        name=str(data.get("name", "experiment")),
        env_kind=kind,
        env=env_cfg,
        learner=learner,
        budget=budget,
        seeds=tuple(seeds),
        treatment=treatment,
        governance=gov,
        search=search,
        output_dir=str(data.get("output_dir", f"runs/{data.get('name', 'experiment')}")),
        raw=raw,
    )


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError("<file>", str(exc)) from exc
    try:
        data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError("<file>", f"cannot parse: {exc}") from exc
    return parse_config(data, base_dir=path.parent)
