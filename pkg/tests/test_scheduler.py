from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from govrek.errors import BracketExhausted, InvalidBudget, InvalidInput
from govrek.scheduler import (
    ConfigRecord,
    IdCounter,
    Provenance,
    Score,
    Selection,
    SelectionMode,
    TrialOutcome,
    make_bracket,
    max_bracket,
    plan_rounds,
    rank,
    round_budgets,
    run_bracket,
    run_gov_rek,
    select_with_fallback,
    top_configs,
    trial_seed,
)


@dataclass(frozen=True)
class NumberHooks:
    """Genomes are floats; higher is better for :class:`QuadTrainer`."""

    def sample(self, rng, n):
        return [float(rng.uniform(0, 1)) for _ in range(n)]

    def mutate(self, genome, rng):
        return genome + float(rng.normal(0, 0.1))

    def merge(self, a, b, rng):
        return (a + b) / 2


@dataclass(frozen=True)
class QuadTrainer:
    """Reward grows with budget and peaks at genome 0.7; state counts trained units."""

    fail_below: float = -1.0

    def __call__(self, genome, budget, seed, resume):
        if genome < self.fail_below:
            raise RuntimeError("bad genome")
        trained = budget + (resume or 0)
        reward = -(genome - 0.7) ** 2 + 0.001 * trained
        return TrialOutcome(Score(reward, 10.0), trained, trained)


def records(genomes):
    return [ConfigRecord(i, g) for i, g in enumerate(genomes)]


def test_brackets_for_27_and_3():
    assert max_bracket(27, 3) == 3
    got = [make_bracket(27, 3, s).as_tuple() for s in (3, 2, 1, 0)]
    assert got == [(3, 27, 1), (2, 12, 3), (1, 6, 9), (0, 4, 27)]
    b = make_bracket(27, 3, 3)
    assert [(r.n, r.r) for r in b.rungs] == [(27, 1), (9, 3), (3, 9), (1, 27)]
    assert b.B == 108


def test_consumed_within_bound():
    for s in range(4):
        b = make_bracket(27, 3, s)
        assert b.consumed() <= b.budget_bound()
    assert [make_bracket(27, 3, s).consumed() for s in (3, 2, 1, 0)] == [108, 99, 108, 108]


def test_round_budgets():
    assert round_budgets(81, 3) == [81, 54, 27]
    assert round_budgets(10, 1) == [10]
    plan = plan_rounds(81, 3, 3)
    assert plan.round_budgets == (81, 54, 27)
    assert [len(r) for r in plan.brackets] == [5, 4, 4]


def test_plan_validation():
    with pytest.raises(InvalidBudget):
        plan_rounds(2, 1, 3)
    with pytest.raises(InvalidBudget):
        plan_rounds(3, 5, 3)
    with pytest.raises(InvalidInput):
        plan_rounds(27, 1, 1)
    with pytest.raises(InvalidInput):
        make_bracket(27, 3, 4)


def test_config_record_invariant():
    with pytest.raises(InvalidInput):
        ConfigRecord(1, 0.5, parent_id=0)
    with pytest.raises(InvalidInput):
        ConfigRecord(1, 0.5, provenance=Provenance.MUTATED)
    ConfigRecord(1, 0.5, parent_id=0, provenance=Provenance.MUTATED)


def test_lexicographic_ranking_breaks_ties_by_length_then_id():
    a = (ConfigRecord(2, 0), Score(1.0, 20.0))
    b = (ConfigRecord(1, 0), Score(1.0, 20.0))
    c = (ConfigRecord(0, 0), Score(1.0, 30.0))
    d = (ConfigRecord(3, 0), Score(2.0, 90.0))
    e = (ConfigRecord(4, 0), Score.failure())
    assert [r.id for r, _ in rank([e, c, a, b, d], Selection())] == [3, 1, 2, 0, 4]


def test_scalarized_ranking_trades_length():
    sel = Selection(SelectionMode.SCALARIZED, lam=0.1, max_episode_len=100)
    long = (ConfigRecord(0, 0), Score(1.0, 100.0))
    short = (ConfigRecord(1, 0), Score(0.95, 10.0))
    assert rank([long, short], sel)[0][0].id == 1
    assert rank([long, short], Selection())[0][0].id == 0


def test_fallback_needs_strict_improvement():
    parent = (ConfigRecord(0, 0.5), Score(1.0, 10.0))
    tie = (ConfigRecord(1, 0.6, 0, Provenance.MUTATED), Score(1.0, 10.0))
    better = (ConfigRecord(2, 0.6, 0, Provenance.MUTATED), Score(1.1, 10.0))
    assert select_with_fallback(parent, tie).id == 0
    assert select_with_fallback(parent, better).id == 2


def test_top_configs_verbatim_without_operators():
    results = [(ConfigRecord(i, float(i)), Score(float(i), 1.0)) for i in range(5)]
    top = top_configs(2, results, m=0.0, s_prob=0.0)
    assert [r.id for r in top] == [4, 3]
    with pytest.raises(InvalidInput):
        top_configs(2, results, m=0.5, s_prob=0.0)
    with pytest.raises(InvalidInput):
        top_configs(2, [], m=0.0, s_prob=0.0)


def test_top_configs_always_vary_with_probability_one():
    results = [(ConfigRecord(i, float(i)), Score(float(i), 1.0)) for i in range(4)]
    rng = np.random.default_rng(0)
    ids = IdCounter(100)
    out = top_configs(3, results, 1.0, 1.0, rng, NumberHooks(), ids)
    assert all(r.provenance is Provenance.SUPERIMPOSED for r in out)
    assert [r.parent_id for r in out] == [3, 2, 1]
    assert all(r.partner_id in {1, 2, 3} and r.partner_id != r.parent_id for r in out)
    assert [r.id for r in out] == [100, 101, 102]


def test_trial_seed_is_stable_and_distinct():
    assert trial_seed(0, 5) == trial_seed(0, 5)
    assert len({trial_seed(0, i) for i in range(100)}) == 100
    assert trial_seed(1, 5) != trial_seed(0, 5)


def test_run_bracket_successive_halving():
    bracket = make_bracket(9, 3, 2)
    genomes = list(np.linspace(0.0, 1.0, bracket.n_gov))
    res = run_bracket(bracket, records(genomes), QuadTrainer())
    by_rung = {}
    for row in res.rows:
        by_rung.setdefault(row.rung, []).append(row)
    assert [len(by_rung[j]) for j in range(3)] == [9, 3, 1]
    assert res.consumed == bracket.consumed()
    assert abs(genomes[res.ranked[0][0].id] - 0.7) <= 0.0625 + 1e-9
    # resumed survivors accumulate budget across rungs
    best = res.ranked[0][0].id
    assert res.outcomes[best].state == sum(r.r for r in bracket.rungs)


def test_run_bracket_without_resume_retrains():
    bracket = make_bracket(9, 3, 1)
    res = run_bracket(bracket, records(list(np.linspace(0, 1, bracket.n_gov))), QuadTrainer(), resume=False)
    best = res.ranked[0][0].id
    assert res.outcomes[best].state == bracket.rungs[-1].r


def test_failed_configs_are_dropped_then_exhaustion_raises():
    bracket = make_bracket(9, 3, 1)
    genomes = [-5.0, -5.0, 0.7, -5.0, -5.0, -5.0][:bracket.n_gov]
    res = run_bracket(bracket, records(genomes), QuadTrainer(fail_below=0.0))
    assert sum(r.status == "failed" for r in res.rows) == bracket.n_gov - 1
    assert res.ranked[0][0].id == 2
    with pytest.raises(BracketExhausted):
        run_bracket(bracket, records([-5.0] * bracket.n_gov), QuadTrainer(fail_below=0.0))


def test_run_gov_rek_finds_good_genome():
    plan = plan_rounds(18, 2, 3, t_k=2)
    result = run_gov_rek(plan, NumberHooks(), QuadTrainer(), seed=1)
    assert len(result.winners) == 2
    assert abs(result.winners[0].record.genome - 0.7) < 0.2
    assert result.consumed == sum(b.consumed() for rnd in plan.brackets for b in rnd)
    ids = [w.record.id for w in result.winners]
    assert len(set(ids)) == len(ids)
    for fb in result.fallbacks:
        assert fb["kept"] in (fb["child"], fb["parent"])
        if fb["kept"] == fb["child"]:
            assert fb["child_reward"] > fb["parent_reward"] or math.isclose(fb["child_reward"], fb["parent_reward"])


def test_run_gov_rek_is_deterministic():
    plan = plan_rounds(18, 2, 3, t_k=2)
    a = run_gov_rek(plan, NumberHooks(), QuadTrainer(), seed=4)
    b = run_gov_rek(plan, NumberHooks(), QuadTrainer(), seed=4)
    assert a.rows == b.rows
    assert [w.record for w in a.winners] == [w.record for w in b.winners]


@settings(max_examples=50, deadline=None)
@given(R=st.integers(1, 400), eta=st.integers(2, 5))
def test_property_bracket_accounting(R, eta):
    s_max = max_bracket(R, eta)
    assert eta ** s_max <= R < eta ** (s_max + 1)
    for s in range(s_max + 1):
        b = make_bracket(R, eta, s)
        assert b.consumed() <= b.budget_bound() <= b.slack_bound()
        assert b.n_gov >= 1 and b.r_gov >= 1
        ns = [r.n for r in b.rungs]
        rs = [r.r for r in b.rungs]
        assert ns == sorted(ns, reverse=True)
        assert all(rs[j + 1] == eta * rs[j] for j in range(s))
        assert all(ns[j + 1] < ns[j] for j in range(s) if ns[j] > 1)
        assert rs[-1] <= R


@settings(max_examples=50, deadline=None)
@given(T=st.integers(3, 500), N_r=st.integers(1, 6))
def test_property_round_budgets(T, N_r):
    budgets = round_budgets(T, N_r)
    assert budgets[0] == T
    assert budgets == sorted(budgets, reverse=True)
    assert len(budgets) == N_r


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10 ** 6), m=st.floats(0, 1), s=st.floats(0, 1))
def test_property_top_configs_lineage(seed, m, s):
    rng = np.random.default_rng(seed)
    results = [(ConfigRecord(i, float(rng.uniform())), Score(float(rng.uniform()), 1.0)) for i in range(6)]
    out = top_configs(3, results, m, s, rng, NumberHooks(), IdCounter(50))
    top_ids = [r.id for r, _ in rank(results, Selection())[:3]]
    assert len(out) == 3
    for rec, parent in zip(out, top_ids):
        if rec.provenance is Provenance.SAMPLED:
            assert rec.id == parent
        else:
            assert rec.parent_id == parent and rec.id >= 50
