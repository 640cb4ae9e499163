from __future__ import annotations

import csv
import json
import math

import pytest
import yaml
from hypothesis import given, settings
from hypothesis import strategies as st

from govrek.errors import AlignmentError, ConfigError, InvalidInput, MissingRun
from govrek.harness import aggregate_seeds, compare_runs, load_config, parse_config, run_experiment, run_search
from govrek.harness.run import ci95, mean_final_fraction, read_aggregate, trapezoid_auc
from govrek.learner import CurvePoint

BASE = {
    "name": "tiny",
    "env": {"kind": "grid2d", "dims": [3, 3]},
    "learner": {"algorithm": "tabular_q", "paradigm": "ctce", "eval_episodes": 1},
    "budget": 1000,
    "seeds": [0, 1],
}
GOV = {
    "sign_mode": "all_positive",
    "decay": 0.5,
    "kernels": [
        {"family": "squared_exponential", "scope": "agent:0", "anchor": "agent_start"},
        {"family": "squared_exponential", "scope": "agent:1", "anchor": "agent_start"},
        {"family": "linear", "anchor": "goal"},
    ],
}


def cfg(**over):
    data = json.loads(json.dumps(BASE))
    data.update(over)
    return data


def test_parse_minimal_and_treatments():
    c = parse_config(cfg())
    assert c.treatment == "none" and c.seeds == (0, 1) and c.env.dims == (3, 3)
    assert parse_config(cfg(governance="mors")).treatment == "mors"
    g = parse_config(cfg(governance=GOV))
    assert g.treatment == "governed"
    assert all(s.decay == 0.5 for s in g.governance.specs)
    assert g.governance.specs[0].agent_id == 0


@pytest.mark.parametrize("data, path", [
    (cfg(colour="blue"), "colour"),
    (cfg(learner={"seed": 3}), "learner.seed"),
    (cfg(learner={"speed": 3}), "learner.speed"),
    (cfg(seeds=[1, 1]), "seeds"),
    (cfg(budget=0), "budget"),
    (cfg(env={"kind": "grid4d"}), "env.kind"),
    (cfg(env={"kind": "grid3d", "dims": [3, 3]}), "env.dims"),
    (cfg(governance="magic"), "governance"),
    (cfg(governance={"kernels": [{"family": "ellipsoid"}]}), "governance.kernels[0]"),
    (cfg(governance={"kernels": [{"family": "linear", "bogus": 1}]}), "governance.kernels[0]"),
    (cfg(governance={"kernels": []}), "governance.kernels"),
    (cfg(governance={"kernels": [{"family": "linear"}], "mode": "sideways"}), "governance.mode"),
    (cfg(governance="mors", search={}), "search"),
    (cfg(env={"kind": "dilemma", "n_agents": 4}, governance="mors"), "governance"),
])
def test_config_errors_name_the_field(data, path):
    with pytest.raises(ConfigError) as exc:
        parse_config(data)
    assert exc.value.path == path


def test_kernel_file_reference(tmp_path):
    (tmp_path / "k.yaml").write_text(yaml.safe_dump({"family": "linear", "anchor": "goal"}))
    data = cfg(governance={"kernels": ["k.yaml"]})
    (tmp_path / "exp.yaml").write_text(yaml.safe_dump(data))
    c = load_config(tmp_path / "exp.yaml")
    assert c.governance.specs[0].family.value == "linear"
    (tmp_path / "bad.yaml").write_text("a: [1,")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.yaml")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")


def test_config_hash_tracks_content():
    assert parse_config(cfg()).config_hash() == parse_config(cfg()).config_hash()
    assert parse_config(cfg()).config_hash() != parse_config(cfg(budget=2000)).config_hash()


def test_run_writes_artifacts(tmp_path):
    out = run_experiment(parse_config(cfg(governance=GOV)), tmp_path / "run")
    names = sorted(p.name for p in out.iterdir())
    assert names == ["aggregate.csv", "manifest.json", "policies", "seed_0.csv", "seed_1.csv"]
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["treatment"] == "governed" and not manifest["partial"]
    assert set(manifest["seeds"]) == {"0", "1"}
    with open(out / "seed_0.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["timestep", "avg_reward", "avg_ep_len", "success_rate"]
    assert [int(r[0]) for r in rows[1:]] == [500, 1000]
    agg = read_aggregate(out / "aggregate.csv")
    assert agg.timesteps == (500, 1000) and agg.n_seeds == 2


def test_rerun_is_byte_identical(tmp_path):
    c = parse_config(cfg())
    a = run_experiment(c, tmp_path / "a")
    b = run_experiment(c, tmp_path / "b", workers=2)
    for name in ("seed_0.csv", "seed_1.csv", "aggregate.csv", "manifest.json", "policies/seed_0.npz"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_failed_seed_marks_run_partial(tmp_path):
    # 20 agents under CTCE exceed the tabular capacity for every seed
    data = cfg(env={"kind": "dilemma", "n_agents": 20, "episode_len": 16})
    out = run_experiment(parse_config(data), tmp_path / "fail")
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["partial"]
    assert all(s["status"] == "failed" for s in manifest["seeds"].values())
    assert "CapacityExceeded" in manifest["seeds"]["0"]["error"]


def test_aggregation_math():
    a = [CurvePoint(10, 1.0, 5.0, 0.0), CurvePoint(20, 3.0, 5.0, 1.0)]
    b = [CurvePoint(10, 3.0, 7.0, 0.0), CurvePoint(20, 3.0, 5.0, 1.0)]
    agg = aggregate_seeds([a, b])
    assert agg.reward_mean == (2.0, 3.0)
    assert agg.reward_ci95[0] == pytest.approx(1.96 * math.sqrt(2) / math.sqrt(2))
    assert agg.reward_ci95[1] == 0.0
    with pytest.raises(AlignmentError):
        aggregate_seeds([a])
    with pytest.raises(AlignmentError):
        aggregate_seeds([a, b[:1]])


def test_compare_runs_ranks_by_metric(tmp_path):
    base = run_experiment(parse_config(cfg(name="base")), tmp_path / "base")
    mors = run_experiment(parse_config(cfg(name="mors", governance="mors")), tmp_path / "mors")
    rows = compare_runs([mors, base], "first-success")
    assert {r.name for r in rows} == {"base", "mors"}
    assert rows == compare_runs([base, mors], "first-success")
    with pytest.raises(InvalidInput):
        compare_runs([base, mors], "speed")
    with pytest.raises(InvalidInput):
        compare_runs([base], "auc")
    with pytest.raises(MissingRun):
        compare_runs([base, tmp_path / "nowhere"], "auc")


def test_curve_helpers():
    assert trapezoid_auc([0, 1, 2], [0.0, 1.0, 1.0]) == pytest.approx(1.5)
    curve = [CurvePoint(t, float(t), 1.0, 0.0) for t in range(10, 101, 10)]
    assert mean_final_fraction(curve, 0.1) == 100.0
    assert mean_final_fraction(curve, 0.25) == pytest.approx(90.0)


def test_search_writes_artifacts(tmp_path):
    data = cfg(name="search", budget=1, seeds=[0],
               search={"T": 3, "N_r": 1, "eta": 3, "t_k": 1, "unit": 500, "kernels_per_config": 2})
    out = run_search(parse_config(data), tmp_path / "s")
    plan = json.loads((out / "plan.json").read_text())
    assert plan["round_budgets"] == [3]
    winners = json.loads((out / "winners.json").read_text())
    assert len(winners["winners"]) == 1
    w = winners["winners"][0]
    assert (out / w["policy"]).exists()
    assert w["lineage"][0] == w["config_id"]
    with open(out / "trials.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == sum(r[0] for b in plan["rounds"][0] for r in b["rungs"])
    assert winners["consumed_timesteps"] == 500 * sum(r[0] * r[1] for b in plan["rounds"][0] for r in b["rungs"])


@settings(max_examples=50, deadline=None)
@given(values=st.lists(st.floats(-100, 100), min_size=2, max_size=20))
def test_property_ci95_nonnegative_and_shift_invariant(values):
    c = ci95(values)
    assert c >= 0
    assert ci95([v + 5.0 for v in values]) == pytest.approx(c, abs=1e-9)
