"""Command-line entry point: ``govrek run|search|compare|kernel|env|eval``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import random
import sys
from pathlib import Path

import numpy as np

from .env import GridEnvConfig, canonical_layout
from .errors import BracketExhausted, GovRekError, InvalidInput
from .harness import compare_runs, load_config, run_experiment, run_search
from .harness.run import format_comparison
from .kernel import AnchorContext, Domain, build_composite_fields, build_reward_field, load_spec
from .learner import evaluate, load_policy


def _cell(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(","))


def cmd_run(args) -> int:
    out = run_experiment(args.config, out_dir=args.out_dir, workers=args.workers)
    print(out)
    return 0


def cmd_search(args) -> int:
    cfg = load_config(args.config)
    if cfg.search is None:
        print("config has no search section", file=sys.stderr)
        return 1
    try:
        out = run_search(cfg, out_dir=args.out_dir, workers=args.workers)
    except BracketExhausted as exc:
        print(f"search aborted: {exc}", file=sys.stderr)
        return 2
    print(out)
    return 0


def cmd_compare(args) -> int:
    print(format_comparison(compare_runs(args.runs, args.metric)))
    return 0


def _parse_domain(text: str) -> tuple[int, ...]:
    try:
        dims = tuple(int(v) for v in text.lower().split("x"))
    except ValueError:
        raise InvalidInput(f"bad domain {text!r}; expected e.g. 5x5 or 3x3x3") from None
    if len(dims) not in (2, 3):
        raise InvalidInput(f"bad domain {text!r}; expected 2 or 3 sizes")
    return dims


def cmd_kernel_render(args) -> int:
    specs = [load_spec(p) for p in args.spec]
    dims = _parse_domain(args.domain)
    domain = Domain(dims)
    # anchors default to the canonical delivery layout for this grid
    starts, _package, goal = canonical_layout(GridEnvConfig(dims=dims, n_agents=2))
    if args.agent_start:
        starts = tuple(_cell(s) for s in args.agent_start)
    if args.goal:
        goal = _cell(args.goal)
    context = AnchorContext(agent_starts=starts, goal=goal)
    fields = build_composite_fields(specs, domain, context, args.n_agents)
    raw: dict[int | None, np.ndarray] = {}
    for k, spec in enumerate(specs):
        values = build_reward_field(spec, domain, context, seed=k).values
        raw[spec.agent_id] = raw.get(spec.agent_id, 0.0) + values
    axes = ["row", "col", "layer"][:domain.ndim]
    rows = []
    for owner, f in sorted(fields.items(), key=lambda kv: (kv[0] is None, kv[0] or 0)):
        scope = "agnostic" if owner is None else f"agent:{owner}"
        for idx, cell in enumerate(domain.cells()):
            rows.append([scope, *map(int, cell), repr(float(raw[owner][idx])), repr(float(f.values[idx]))])
    _write_csv(args.out, ["scope", *axes, "raw", "normalized"], rows)
    return 0


def cmd_env_rollout(args) -> int:
    cfg = load_config(args.config)
    env = cfg.make_treated_env(args.seed)
    policy = None if args.policy == "random" else load_policy(args.policy)
    rng = random.Random(args.seed)
    state = env.reset()
    n = env.n_agents
    grid = cfg.env_kind != "dilemma"
    header = ["step"]
    if grid:
        header += [f"pos_{i}" for i in range(n)] + [f"fuel_{i}" for i in range(n)] + ["holder"]
    header += [f"action_{i}" for i in range(n)] + [f"reward_{i}" for i in range(n)]
    rows, done, t = [], False, 0
    while not done:
        if policy is None:
            action = tuple(rng.randrange(env.n_actions) for _ in range(n))
        else:
            action = policy.act(env, state)
        state, rewards, done, _info = env.step(state, action)
        t += 1
        row = [t]
        if grid:
            row += ["|".join(map(str, p)) for p in state.positions] + list(state.fuel)
            row.append("" if state.holder is None else state.holder)
        row += list(action) + [repr(float(r)) for r in rewards]
        rows.append(row)
    _write_csv(args.out, header, rows)
    return 0


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    env = cfg.make_treated_env(args.seed)
    res = evaluate(load_policy(args.policy), env, args.episodes, args.seed)
    print(json.dumps(res._asdict(), sort_keys=True))
    return 0


def _write_csv(out: str | None, header, rows) -> None:
    fh = open(out, "w", newline="") if out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    finally:
        if out:
            fh.close()


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="govrek", description="Governance-kernel reward shaping experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="train every seed of an experiment config")
    r.add_argument("--config", required=True)
    r.add_argument("--out-dir")
    r.add_argument("--workers", type=int)
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("search", help="search kernel configurations")
    s.add_argument("--config", required=True)
    s.add_argument("--out-dir")
    s.add_argument("--workers", type=int)
    s.set_defaults(func=cmd_search)

    c = sub.add_parser("compare", help="rank finished runs")
    c.add_argument("runs", nargs="+")
    c.add_argument("--metric", default="first-success",
                   choices=["first-success", "final-reward", "final-eplen", "auc"])
    c.set_defaults(func=cmd_compare)

    k = sub.add_parser("kernel", help="kernel utilities")
    ksub = k.add_subparsers(dest="kernel_command", required=True)
    kr = ksub.add_parser("render", help="write normalized composite fields as CSV")
    kr.add_argument("--spec", nargs="+", required=True, help="kernel spec files (JSON or YAML)")
    kr.add_argument("--domain", required=True, help="grid size such as 5x5 or 3x3x3")
    kr.add_argument("--n-agents", type=int, default=2)
    kr.add_argument("--agent-start", action="append", help="comma-separated cell, once per agent")
    kr.add_argument("--goal", help="comma-separated goal cell")
    kr.add_argument("--out")
    kr.set_defaults(func=cmd_kernel_render)

    e = sub.add_parser("env", help="environment utilities")
    esub = e.add_subparsers(dest="env_command", required=True)
    er = esub.add_parser("rollout", help="roll out one episode and write the trajectory")
    er.add_argument("--config", required=True)
    er.add_argument("--policy", default="random", help="'random' or a saved policy file")
    er.add_argument("--seed", type=int, default=0)
    er.add_argument("--out")
    er.set_defaults(func=cmd_env_rollout)

    v = sub.add_parser("eval", help="greedy evaluation of a saved policy")
    v.add_argument("--policy", required=True)
    v.add_argument("--config", required=True)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--episodes", type=int, default=20)
    v.set_defaults(func=cmd_eval)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except GovRekError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
