"""Wires kernel configurations into the generic scheduler and writes search artifacts."""

from __future__ import annotations

import csv
import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from .. import __version__
from ..governance import GovernedEnv, ShapingMode
from ..kernel import Domain, KernelSpec, SignMode, mutate, sample_kernel_population
from ..learner import LearnerConfig, train
from ..scheduler import Score, SearchResult, Selection, TrialOutcome, plan_rounds, run_gov_rek
from .config import ExperimentConfig, make_env
from .run import _json_num, default_workers

SEARCH_SCHEMA = "govrek.search.v1"


@dataclass(frozen=True)
class KernelHooks:
    """A genome is a tuple of kernel specs; merging concatenates them.

    Composite fields are renormalized when built, so a merged genome is the
    superposition of both parents' fields.
    """

    domain: Domain
    n_agents: int
    kernels_per_config: int = 3
    sign_mode: SignMode = SignMode.ALL_POSITIVE

    def sample(self, rng: np.random.Generator, n: int) -> list[tuple[KernelSpec, ...]]:
        return [tuple(sample_kernel_population(self.kernels_per_config, self.domain, rng,
                                               n_agents=self.n_agents, sign_mode=self.sign_mode))
                for _ in range(n)]

    def mutate(self, genome: tuple[KernelSpec, ...], rng: np.random.Generator) -> tuple[KernelSpec, ...]:
        return tuple(mutate(spec, rng, 1.0) for spec in genome)

    def merge(self, a: tuple[KernelSpec, ...], b: tuple[KernelSpec, ...], rng: np.random.Generator):
        return tuple(a) + tuple(b)


@dataclass(frozen=True)
class KernelTrainer:
    """Picklable trainer: builds a governed env from a genome and trains on it."""

    env_kind: str
    env_config: Any
    learner: LearnerConfig
    mode: ShapingMode = ShapingMode.ADDITIVE
    gamma: float = 0.99

    def __call__(self, genome, budget: int, seed: int, resume) -> TrialOutcome:
        env = make_env(self.env_kind, self.env_config, seed)
        if genome:
            env = GovernedEnv(env, specs=genome, mode=self.mode, gamma=self.gamma, seed=seed)
        policy, result = train(env, dataclasses.replace(self.learner, seed=seed), budget, resume)
        score = Score(result.avg_reward, result.avg_episode_length, result.success_rate,
                      result.steps_to_first_success)
        return TrialOutcome(score, (policy, result), result.total_timesteps)


def search_from_config(cfg: ExperimentConfig, workers: int | None = None) -> SearchResult:
    s = cfg.search
    probe = make_env(cfg.env_kind, cfg.env, cfg.seeds[0])
    hooks = KernelHooks(probe.domain, probe.n_agents, s.kernels_per_config, s.sign_mode)
    trainer = KernelTrainer(cfg.env_kind, cfg.env, cfg.learner, s.mode, s.gamma)
    selection = Selection(s.selection, max_episode_len=probe.max_episode_len)
    plan = plan_rounds(s.T, s.N_r, s.eta, s.t_k)
    return run_gov_rek(plan, hooks, trainer, seed=cfg.seeds[0], unit=s.unit, m=s.m, s_prob=s.s_prob,
                       selection=selection, resume=s.resume, workers=workers or default_workers())


def run_search(cfg: ExperimentConfig, out_dir: str | Path | None = None, workers: int | None = None) -> Path:
    """Run the kernel search and write plan, trial table, winners and policies."""
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "policies").mkdir(exist_ok=True)
    result = search_from_config(cfg, workers)
    (out / "plan.json").write_text(json.dumps(result.plan.to_dict(), indent=2, sort_keys=True) + "\n")
    with open(out / "trials.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        fields = [f.name for f in dataclasses.fields(result.rows[0])] if result.rows else []
        w.writerow(fields)
        for row in result.rows:
            w.writerow([repr(float(v)) if isinstance(v, float) else v for v in dataclasses.astuple(row)])
    winners = []
    for rank, win in enumerate(result.winners, 1):
        policy, _trial = win.state
        fname = f"policies/winner_{rank}_config_{win.record.id}.npz"
        policy.save(out / fname)
        winners.append({
            "rank": rank,
            "config_id": win.record.id,
            "provenance": win.record.provenance.value,
            "parent_id": win.record.parent_id,
            "lineage": _lineage(result, win.record.id),
            "kernels": [spec.to_dict() for spec in win.record.genome],
            "avg_reward": win.score.avg_reward,
            "avg_episode_length": win.score.avg_episode_length,
            "success_rate": win.score.success_rate,
            "steps_to_first_success": _json_num(win.score.steps_to_first_success),
            "trained_timesteps": win.budget,
            "policy": fname,
        })
    manifest = {
        "schema": SEARCH_SCHEMA,
        "name": cfg.name,
        "config_hash": cfg.config_hash(),
        "code_version": __version__,
        "config": cfg.raw,
        "consumed_timesteps": result.consumed,
        "fallbacks": result.fallbacks,
        "winners": winners,
    }
    (out / "winners.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out


def _lineage(result: SearchResult, config_id: int) -> list[int]:
    chain = [config_id]
    rec = result.records.get(config_id)
    while rec is not None and rec.parent_id is not None:
        chain.append(rec.parent_id)
        rec = result.records.get(rec.parent_id)
    return chain
