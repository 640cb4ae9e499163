"""Repeated Hyperband rounds of successive-halving brackets over kernel configurations.

The scheduler never looks inside a configuration.  It sees opaque genomes and
manipulates them only through :class:`GeneticHooks` (sample, mutate, merge),
and it trains them only through a trainer callable.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Protocol, Sequence

import numpy as np

from .errors import BracketExhausted, InvalidBudget, InvalidInput

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# plan geometry


def max_bracket(R: int, eta: int) -> int:
    """Largest ``s`` with ``eta**s <= R`` (integer floor of log base eta)."""
    s = 0
    while eta ** (s + 1) <= R:
        s += 1
    return s


@dataclass(frozen=True)
class Rung:
    n: int
    r: int


@dataclass(frozen=True)
class Bracket:
    s: int
    n_gov: int
    r_gov: int
    R: int
    eta: int
    rungs: tuple[Rung, ...]

    @property
    def B(self) -> int:
        return (max_bracket(self.R, self.eta) + 1) * self.R

    def consumed(self) -> int:
        """Training units spent if every rung trains all its configs."""
        return sum(rung.n * rung.r for rung in self.rungs)

    def budget_bound(self) -> int:
        """``(s+1) * n_gov * r_gov``: every rung costs at most ``n_gov * r_gov``."""
        return (self.s + 1) * self.n_gov * self.r_gov

    def slack_bound(self) -> int:
        """``B + (s+1) * r_gov``: the ceiling on ``n_gov`` adds at most ``r_gov`` per rung."""
        return self.B + (self.s + 1) * self.r_gov

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.s, self.n_gov, self.r_gov)


def make_bracket(R: int, eta: int, s: int) -> Bracket:
    s_max = max_bracket(R, eta)
    if not 0 <= s <= s_max:
        raise InvalidInput(f"bracket s={s} outside 0..{s_max}")
    B = (s_max + 1) * R
    # ceil(B/R * eta^s / (s+1)) in exact integer arithmetic
    num = B * eta ** s
    den = R * (s + 1)
    n_gov = -(-num // den)
    # s <= s_max guarantees eta**s <= R, so the floored r_gov is at least 1
    r_gov = R // eta ** s
    rungs = tuple(Rung(n_gov // eta ** j, r_gov * eta ** j) for j in range(s + 1))
    return Bracket(s, n_gov, r_gov, R, eta, rungs)


@dataclass(frozen=True)
class SearchPlan:
    T: int
    N_r: int
    eta: int
    t_k: int
    round_budgets: tuple[int, ...]
    brackets: tuple[tuple[Bracket, ...], ...]

    def to_dict(self) -> dict:
        return {
            "T": self.T, "N_r": self.N_r, "eta": self.eta, "t_k": self.t_k,
            "round_budgets": list(self.round_budgets),
            "rounds": [[{"s": b.s, "n_gov": b.n_gov, "r_gov": b.r_gov, "B": b.B,
                         "rungs": [[r.n, r.r] for r in b.rungs]} for b in rnd]
                       for rnd in self.brackets],
        }


def round_budgets(T: int, N_r: int) -> list[int]:
    """``reverse_sorted([T * i / N_r for i in 1..N_r])``, floored to integers."""
    return sorted((T * i // N_r for i in range(1, N_r + 1)), reverse=True)


def plan_rounds(T: int, N_r: int, eta: int, t_k: int = 1) -> SearchPlan:
    if N_r < 1 or eta < 2 or t_k < 1:
        raise InvalidInput("need N_r >= 1, eta >= 2 and t_k >= 1")
    if T < eta:
        raise InvalidBudget(f"total budget {T} is smaller than eta={eta}")
    budgets = round_budgets(T, N_r)
    if min(budgets) < 1:
        raise InvalidBudget(f"T={T} leaves an empty round when split over {N_r} rounds")
    brackets = tuple(
        tuple(make_bracket(R, eta, s) for s in range(max_bracket(R, eta), -1, -1))
        for R in budgets)
    return SearchPlan(T, N_r, eta, t_k, tuple(budgets), brackets)


# ---------------------------------------------------------------------------
# configurations and ranking


class Provenance(str, Enum):
    SAMPLED = "sampled"
    MUTATED = "mutated"
    SUPERIMPOSED = "superimposed"


@dataclass(frozen=True)
class ConfigRecord:
    id: int
    genome: Any
    parent_id: int | None = None
    provenance: Provenance = Provenance.SAMPLED
    partner_id: int | None = None

    def __post_init__(self) -> None:
        if (self.parent_id is None) != (self.provenance is Provenance.SAMPLED):
            raise InvalidInput("parent id is required exactly for mutated or superimposed configs")


@dataclass(frozen=True)
class Score:
    """What the scheduler keeps of a trial: enough to rank and to audit."""

    avg_reward: float
    avg_episode_length: float
    success_rate: float = 0.0
    steps_to_first_success: float = math.inf
    failed: bool = False

    @classmethod
    def failure(cls) -> "Score":
        return cls(-math.inf, math.inf, 0.0, math.inf, True)


class SelectionMode(str, Enum):
    LEXICOGRAPHIC = "lexicographic"
    SCALARIZED = "scalarized"


@dataclass(frozen=True)
class Selection:
    """Total order on scored configs; smaller keys rank first."""

    mode: SelectionMode = SelectionMode.LEXICOGRAPHIC
    lam: float = 0.1
    max_episode_len: float = 1.0

    def value(self, score: Score) -> float:
        return score.avg_reward - self.lam * score.avg_episode_length / self.max_episode_len

    def key(self, config_id: int, score: Score) -> tuple:
        if score.failed:
            return (1, 0.0, 0.0, config_id)
        if SelectionMode(self.mode) is SelectionMode.SCALARIZED:
            return (0, -self.value(score), score.avg_episode_length, config_id)
        return (0, -score.avg_reward, score.avg_episode_length, config_id)

    def better(self, a: Score, b: Score) -> bool:
        """``a`` strictly improves on ``b`` (ids play no part)."""
        return self.key(0, a)[:3] < self.key(0, b)[:3]


def rank(entries: Sequence[tuple[ConfigRecord, Score]], selection: Selection):
    return sorted(entries, key=lambda e: selection.key(e[0].id, e[1]))


def select_with_fallback(parent: tuple[ConfigRecord, Score], child: tuple[ConfigRecord, Score],
                         selection: Selection = Selection()) -> ConfigRecord:
    """The child replaces its parent only on a strict improvement."""
    return child[0] if selection.better(child[1], parent[1]) else parent[0]


# ---------------------------------------------------------------------------
# genetic operators


class GeneticHooks(Protocol):
    def sample(self, rng: np.random.Generator, n: int) -> list[Any]: ...

    def mutate(self, genome: Any, rng: np.random.Generator) -> Any: ...

    def merge(self, a: Any, b: Any, rng: np.random.Generator) -> Any: ...


class IdCounter:
    def __init__(self, start: int = 0):
        self.next = start

    def __call__(self) -> int:
        i = self.next
        self.next += 1
        return i


def top_configs(
    t_k: int,
    results: Sequence[tuple[ConfigRecord, Score]],
    m: float = 0.5,
    s_prob: float = 0.5,
    rng: np.random.Generator | None = None,
    hooks: GeneticHooks | None = None,
    new_id: Callable[[], int] | None = None,
    selection: Selection = Selection(),
) -> list[ConfigRecord]:
    """Top ``t_k`` configs, each then mutated w.p. ``m`` and merged w.p. ``s_prob``."""
    if not results:
        raise InvalidInput("results must be non-empty")
    if not (0.0 <= m <= 1.0 and 0.0 <= s_prob <= 1.0):
        raise InvalidInput("m and s_prob are probabilities")
    top = [rec for rec, _ in rank(results, selection)[:t_k]]
    if m == 0.0 and s_prob == 0.0:
        return top
    if hooks is None or rng is None or new_id is None:
        raise InvalidInput("genetic operators need hooks, an rng and an id source")
    out = []
    for k, rec in enumerate(top):
        genome, prov, partner = rec.genome, None, None
        if rng.random() < m:
            genome, prov = hooks.mutate(genome, rng), Provenance.MUTATED
        others = [o for j, o in enumerate(top) if j != k]
        if rng.random() < s_prob and others:
            mate = others[int(rng.integers(len(others)))]
            genome, prov, partner = hooks.merge(genome, mate.genome, rng), Provenance.SUPERIMPOSED, mate.id
        if prov is None:
            out.append(rec)
        else:
            out.append(ConfigRecord(new_id(), genome, rec.id, prov, partner))
    return out


# ---------------------------------------------------------------------------
# execution


@dataclass
class TrialOutcome:
    """What a trainer returns: a score plus opaque state to resume from."""

    score: Score
    state: Any = None
    total_timesteps: int = 0


class Trainer(Protocol):
    def __call__(self, genome: Any, budget: int, seed: int, resume: Any) -> TrialOutcome: ...


@dataclass(frozen=True)
class TrialRow:
    round: int
    bracket: int
    rung: int
    config_id: int
    budget: int
    avg_reward: float
    avg_episode_length: float
    success_rate: float
    steps_to_first_success: float
    status: str


def trial_seed(base_seed: int, config_id: int) -> int:
    return int(np.random.SeedSequence([base_seed, config_id]).generate_state(1)[0])


def _run_one(args):
    trainer, genome, budget, seed, resume = args
    try:
        return trainer(genome, budget, seed, resume)
    except Exception as exc:  # a failing config must not sink the bracket
        log.warning("trial failed: %s", exc)
        return TrialOutcome(Score.failure())


class Runner:
    """Maps trials over an optional process pool; outputs come back in input order."""

    def __init__(self, workers: int = 1):
        cap = os.environ.get("GOVREK_WORKERS")
        if cap:
            workers = min(workers, max(1, int(cap)))
        self.workers = max(1, workers)
        self._pool: ProcessPoolExecutor | None = None

    def map(self, jobs: list) -> list[TrialOutcome]:
        if self.workers == 1 or len(jobs) <= 1:
            return [_run_one(j) for j in jobs]
        if self._pool is None:
            self._pool = ProcessPoolExecutor(max_workers=self.workers)
        return list(self._pool.map(_run_one, jobs))

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def __enter__(self) -> "Runner":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


@dataclass
class BracketResult:
    ranked: list[tuple[ConfigRecord, Score]]
    outcomes: dict[int, TrialOutcome]
    rows: list[TrialRow]
    consumed: int
    history: dict[int, list[Score]]


def run_bracket(
    bracket: Bracket,
    population: Sequence[ConfigRecord],
    trainer: Trainer,
    selection: Selection = Selection(),
    *,
    unit: int = 1,
    base_seed: int = 0,
    resume: bool = True,
    runner: Runner | None = None,
    round_index: int = 0,
) -> BracketResult:
    """Successive halving: train, rank, keep ``n_gov_(j+1)``, repeat with more budget.

    ``unit`` converts plan budget units into trainer timesteps.  With
    ``resume`` a survivor continues from its previous-rung state for
    ``r_gov_j`` more units; otherwise it is retrained from scratch.
    """
    if len(population) != bracket.n_gov:
        raise InvalidInput(f"bracket s={bracket.s} needs {bracket.n_gov} configs, got {len(population)}")
    runner = runner or Runner(1)
    survivors = sorted(population, key=lambda r: r.id)
    outcomes: dict[int, TrialOutcome] = {}
    history: dict[int, list[Score]] = {r.id: [] for r in survivors}
    rows: list[TrialRow] = []
    consumed = 0
    ranked: list[tuple[ConfigRecord, Score]] = []
    for j, rung in enumerate(bracket.rungs):
        budget = rung.r * unit
        jobs = []
        for rec in survivors:
            prev = outcomes.get(rec.id)
            state = prev.state if (resume and prev is not None and not prev.score.failed) else None
            jobs.append((trainer, rec.genome, budget, trial_seed(base_seed, rec.id), state))
        for rec, out in zip(survivors, runner.map(jobs)):
            outcomes[rec.id] = out
            history[rec.id].append(out.score)
            consumed += budget
            sc = out.score
            rows.append(TrialRow(round_index, bracket.s, j, rec.id, budget, sc.avg_reward,
                                 sc.avg_episode_length, sc.success_rate, sc.steps_to_first_success,
                                 "failed" if sc.failed else "ok"))
        ranked = rank([(rec, outcomes[rec.id].score) for rec in survivors], selection)
        if all(sc.failed for _, sc in ranked):
            raise BracketExhausted(f"every config in bracket s={bracket.s} failed at rung {j}")
        if j + 1 < len(bracket.rungs):
            keep = bracket.rungs[j + 1].n
            # failed configs are never carried into a more expensive rung
            survivors = sorted((rec for rec, sc in ranked[:keep] if not sc.failed), key=lambda r: r.id)
    return BracketResult(ranked, outcomes, rows, consumed, history)


@dataclass
class Winner:
    record: ConfigRecord
    score: Score
    state: Any
    budget: int


@dataclass
class SearchResult:
    plan: SearchPlan
    winners: list[Winner]
    rows: list[TrialRow] = field(default_factory=list)
    records: dict[int, ConfigRecord] = field(default_factory=dict)
    fallbacks: list[dict] = field(default_factory=list)
    consumed: int = 0


def run_gov_rek(
    plan: SearchPlan,
    hooks: GeneticHooks,
    trainer: Trainer,
    *,
    seed: int = 0,
    unit: int = 1,
    m: float = 0.5,
    s_prob: float = 0.5,
    selection: Selection = Selection(),
    resume: bool = True,
    workers: int = 1,
) -> SearchResult:
    """All rounds of the search; returns the global top ``t_k`` with their trained state.

    Round 0 brackets start from freshly sampled configs.  Later brackets start
    from the genetically varied winners of the previous round, topped up with
    fresh samples.  A varied child that does not strictly beat its parent at
    the same budget is replaced by the parent.
    """
    rng = np.random.default_rng(seed)
    new_id = IdCounter()
    result = SearchResult(plan, [])
    finalists: list[Winner] = []
    carried: list[ConfigRecord] = []
    parent_cache: dict[tuple[int, int], TrialOutcome] = {}

    def register(rec: ConfigRecord) -> ConfigRecord:
        result.records[rec.id] = rec
        return rec

    with Runner(workers) as runner:
        for ri, brackets in enumerate(plan.brackets):
            round_winners: list[Winner] = []
            for bracket in brackets:
                population = list(carried[:bracket.n_gov])
                fresh = bracket.n_gov - len(population)
                population += [register(ConfigRecord(new_id(), g)) for g in hooks.sample(rng, fresh)]
                br = run_bracket(bracket, population, trainer, selection, unit=unit, base_seed=seed,
                                 resume=resume, runner=runner, round_index=ri)
                result.rows.extend(br.rows)
                result.consumed += br.consumed
                best_rec, best_score = br.ranked[0]
                reached = bracket.rungs[:len(br.history[best_rec.id])]
                total = (sum(r.r for r in reached) if resume else reached[-1].r) * unit
                winner = Winner(best_rec, best_score, br.outcomes[best_rec.id].state, total)
                if best_rec.parent_id is not None:
                    winner = _fallback(winner, result, trainer, runner, parent_cache, selection,
                                       seed, unit, bracket, resume)
                round_winners.append(winner)
            finalists.extend(round_winners)
            pool = [(w.record, w.score) for w in round_winners]
            carried = [register(r) for r in top_configs(plan.t_k, pool, m, s_prob, rng, hooks, new_id,
                                                        selection)]
    ranked = rank([(w.record, w.score) for w in finalists], selection)
    by_id: dict[int, Winner] = {}
    for w in finalists:
        # the same config can win in several rounds; keep its best showing
        if w.record.id not in by_id or selection.better(w.score, by_id[w.record.id].score):
            by_id[w.record.id] = w
    seen: list[Winner] = []
    for rec, _ in ranked:
        if rec.id in by_id and all(w.record.id != rec.id for w in seen):
            seen.append(by_id[rec.id])
    result.winners = seen[:plan.t_k]
    return result


def _fallback(winner, result, trainer, runner, cache, selection, seed, unit, bracket,
              resume) -> Winner:
    """Retrain the parent on the child's rung schedule and keep whichever is strictly better."""
    parent = result.records[winner.record.parent_id]
    key = (parent.id, bracket.R, bracket.s)
    if key not in cache:
        state, outcome = None, None
        for rung in bracket.rungs:
            budget = rung.r * unit
            outcome = runner.map([(trainer, parent.genome, budget, trial_seed(seed, parent.id),
                                   state if resume else None)])[0]
            state = outcome.state
            if outcome.score.failed:
                break
        cache[key] = outcome
    p_out = cache[key]
    chosen = select_with_fallback((parent, p_out.score), (winner.record, winner.score), selection)
    result.fallbacks.append({"child": winner.record.id, "parent": parent.id,
                             "child_reward": winner.score.avg_reward,
                             "parent_reward": p_out.score.avg_reward,
                             "kept": chosen.id})
    if chosen.id == winner.record.id:
        return winner
    return Winner(parent, p_out.score, p_out.state, winner.budget)
