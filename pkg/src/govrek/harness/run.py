"""Seed fan-out, per-seed metric CSVs, aggregation with 95% intervals, run comparison."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import os
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .. import __version__
from ..errors import AlignmentError, InvalidInput, MissingRun
from ..learner import CurvePoint, TrialResult, train
from .config import ExperimentConfig, load_config

log = logging.getLogger(__name__)

RUN_SCHEMA = "govrek.run.v1"
SEED_HEADER = ("timestep", "avg_reward", "avg_ep_len", "success_rate")
AGG_HEADER = ("timestep", "reward_mean", "reward_ci95", "eplen_mean", "eplen_ci95")
Z95 = 1.96


def default_workers() -> int:
    cap = os.environ.get("GOVREK_WORKERS")
    return max(1, int(cap)) if cap else 1


def _fmt(x: float) -> str:
    return repr(float(x))


def write_seed_csv(path: Path, curve: Sequence[CurvePoint]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SEED_HEADER)
        for p in curve:
            w.writerow([p.timestep, _fmt(p.avg_reward), _fmt(p.avg_episode_length), _fmt(p.success_rate)])


def read_seed_csv(path: Path) -> list[CurvePoint]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [CurvePoint(int(r["timestep"]), float(r["avg_reward"]), float(r["avg_ep_len"]),
                       float(r["success_rate"])) for r in rows]


@dataclass(frozen=True)
class AggregateCurve:
    timesteps: tuple[int, ...]
    reward_mean: tuple[float, ...]
    reward_ci95: tuple[float, ...]
    eplen_mean: tuple[float, ...]
    eplen_ci95: tuple[float, ...]
    n_seeds: int


def ci95(values: Sequence[float]) -> float:
    """Normal-approximation half-width ``1.96 * s / sqrt(n)`` with the sample std."""
    if len(values) < 2:
        raise AlignmentError("a confidence interval needs at least two seeds")
    return Z95 * statistics.stdev(values) / math.sqrt(len(values))


def aggregate_seeds(curves: Sequence[Sequence[CurvePoint]]) -> AggregateCurve:
    if len(curves) < 2:
        raise AlignmentError("aggregation needs at least two seeds")
    steps = [tuple(p.timestep for p in c) for c in curves]
    if any(s != steps[0] for s in steps[1:]):
        raise AlignmentError("seed curves are sampled at different timesteps")
    cols = {"r": [], "rc": [], "l": [], "lc": []}
    for k in range(len(steps[0])):
        rewards = [c[k].avg_reward for c in curves]
        lengths = [c[k].avg_episode_length for c in curves]
        cols["r"].append(statistics.fmean(rewards))
        cols["rc"].append(ci95(rewards))
        cols["l"].append(statistics.fmean(lengths))
        cols["lc"].append(ci95(lengths))
    return AggregateCurve(steps[0], tuple(cols["r"]), tuple(cols["rc"]), tuple(cols["l"]),
                          tuple(cols["lc"]), len(curves))


def emit_plot_data(agg: AggregateCurve, out: str | Path) -> Path:
    out = Path(out)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(AGG_HEADER)
        for row in zip(agg.timesteps, agg.reward_mean, agg.reward_ci95, agg.eplen_mean, agg.eplen_ci95):
            w.writerow([row[0], *map(_fmt, row[1:])])
    return out


def read_aggregate(path: str | Path) -> AggregateCurve:
    path = Path(path)
    if not path.exists():
        raise MissingRun(f"no aggregate curve at {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != AGG_HEADER:
            raise InvalidInput(f"unexpected aggregate header {header}")
        rows = list(reader)
    cols = list(zip(*rows)) if rows else [(), (), (), (), ()]
    n = 0
    manifest = path.parent / "manifest.json"
    if manifest.exists():
        n = sum(1 for s in json.loads(manifest.read_text())["seeds"].values() if s["status"] == "ok")
    return AggregateCurve(tuple(int(x) for x in cols[0]), *(tuple(float(x) for x in c) for c in cols[1:]),
                          n_seeds=n)


def _json_num(x: float):
    return None if math.isinf(x) or math.isnan(x) else x


def _run_seed(args) -> tuple[int, dict, TrialResult | None, object]:
    cfg, seed = args
    try:
        env = cfg.make_treated_env(seed)
        lc = dataclasses.replace(cfg.learner, seed=seed)
        policy, result = train(env, lc, cfg.budget)
        return seed, {"status": "ok"}, result, policy
    except Exception as exc:  # recorded in the manifest; other seeds carry on
        log.warning("seed %d failed: %s", seed, exc)
        return seed, {"status": "failed", "error": f"{type(exc).__name__}: {exc}"}, None, None


def run_experiment(config: ExperimentConfig | str | Path, out_dir: str | Path | None = None,
                   workers: int | None = None) -> Path:
    """Train every seed and write the run directory; reruns overwrite identically."""
    cfg = config if isinstance(config, ExperimentConfig) else load_config(config)
    if cfg.treatment == "search":
        from .search import run_search
        return run_search(cfg, out_dir=out_dir, workers=workers)
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "policies").mkdir(exist_ok=True)
    workers = workers or default_workers()
    jobs = [(cfg, s) for s in sorted(cfg.seeds)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            outcomes = list(pool.map(_run_seed, jobs))
    else:
        outcomes = [_run_seed(j) for j in jobs]

    seeds_meta, curves = {}, []
    for seed, meta, result, policy in sorted(outcomes, key=lambda o: o[0]):
        if result is not None:
            write_seed_csv(out / f"seed_{seed}.csv", result.curve)
            policy.save(out / "policies" / f"seed_{seed}.npz")
            curves.append(result.curve)
            meta.update({
                "steps_to_first_success": _json_num(result.steps_to_first_success),
                "final_avg_reward": result.avg_reward,
                "final_avg_episode_length": result.avg_episode_length,
                "final_success_rate": result.success_rate,
                "total_timesteps": result.total_timesteps,
            })
        seeds_meta[str(seed)] = meta
    if len(curves) >= 2:
        emit_plot_data(aggregate_seeds(curves), out / "aggregate.csv")
    elif len(curves) == 1:
        # a single seed has no spread; report the curve with zero-width intervals
        c = curves[0]
        emit_plot_data(AggregateCurve(tuple(p.timestep for p in c), tuple(p.avg_reward for p in c),
                                      (0.0,) * len(c), tuple(p.avg_episode_length for p in c),
                                      (0.0,) * len(c), 1), out / "aggregate.csv")
    manifest = {
        "schema": RUN_SCHEMA,
        "name": cfg.name,
        "treatment": cfg.treatment,
        "config_hash": cfg.config_hash(),
        "code_version": __version__,
        "config": cfg.raw,
        "budget": cfg.budget,
        "seeds": seeds_meta,
        "partial": any(m["status"] != "ok" for m in seeds_meta.values()),
        "files": {"per_seed": "seed_<seed>.csv", "aggregate": "aggregate.csv", "policies": "policies/"},
        "columns": {"per_seed": list(SEED_HEADER), "aggregate": list(AGG_HEADER)},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out


# ---------------------------------------------------------------------------
# comparison

METRICS = ("first-success", "final-reward", "final-eplen", "auc")


def trapezoid_auc(x: Sequence[float], y: Sequence[float]) -> float:
    if len(x) < 2:
        return 0.0
    return float(sum((x[i + 1] - x[i]) * (y[i] + y[i + 1]) / 2.0 for i in range(len(x) - 1)))


@dataclass(frozen=True)
class RunSummary:
    name: str
    first_success: float
    final_reward: float
    final_eplen: float
    auc: float


def summarize_run(run_dir: str | Path) -> RunSummary:
    run_dir = Path(run_dir)
    agg = read_aggregate(run_dir / "aggregate.csv")
    manifest_path = run_dir / "manifest.json"
    if not manifest_path.exists():
        raise MissingRun(f"no manifest in {run_dir}")
    seeds = json.loads(manifest_path.read_text())["seeds"]
    firsts = [math.inf if s.get("steps_to_first_success") is None else s["steps_to_first_success"]
              for s in seeds.values() if s["status"] == "ok"]
    return RunSummary(
        name=run_dir.name,
        first_success=statistics.median(firsts) if firsts else math.inf,
        final_reward=agg.reward_mean[-1] if agg.timesteps else math.nan,
        final_eplen=agg.eplen_mean[-1] if agg.timesteps else math.nan,
        auc=trapezoid_auc(agg.timesteps, agg.reward_mean),
    )


def compare_runs(run_dirs: Sequence[str | Path], metric: str = "first-success") -> list[RunSummary]:
    """Summaries ranked best-first by ``metric``; ties keep name order."""
    if metric not in METRICS:
        raise InvalidInput(f"metric must be one of {METRICS}")
    if len(run_dirs) < 2:
        raise InvalidInput("compare needs at least two run directories")
    rows = sorted((summarize_run(d) for d in run_dirs), key=lambda r: r.name)
    key = {
        "first-success": lambda r: r.first_success,
        "final-reward": lambda r: -r.final_reward,
        "final-eplen": lambda r: r.final_eplen,
        "auc": lambda r: -r.auc,
    }[metric]
    return sorted(rows, key=key)


def format_comparison(rows: Sequence[RunSummary]) -> str:
    lines = ["rank,name,first_success_median,final_reward,final_eplen,auc"]
    for i, r in enumerate(rows, 1):
        lines.append(f"{i},{r.name},{r.first_success},{_fmt(r.final_reward)},{_fmt(r.final_eplen)},{_fmt(r.auc)}")
    return "\n".join(lines)


def mean_final_fraction(curve: Sequence[CurvePoint], fraction: float = 0.1) -> float:
    """Mean avg_reward over curve points in the last ``fraction`` of training."""
    if not curve:
        raise InvalidInput("empty curve")
    end = curve[-1].timestep
    cut = end * (1.0 - fraction)
    pts = [p.avg_reward for p in curve if p.timestep > cut] or [curve[-1].avg_reward]
    return float(np.mean(pts))
