"""Command-line entry points.

Subcommands: collect, solve-tabular, train, evaluate, ablate-her,
ablate-noise, plan-transfer, run-all, selftest.  Environments are named by
spec strings: "pointreach", "grid:HxW[:slip]", "two-room",
"two-room-king", or a path to an MDP JSON file.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import dataset as ds
from . import harness
from .fdiv import CHI2, KL, FDivergence
from .mdp import GridworldSpec, TabularPolicy, build_gridworld, from_json
from .neural import (ALGOS, GoalPolicy, MlpParams, PointReachEnv,
                     bank_from_point, bank_from_tabular, collect_pointreach,
                     load_point_trajectories, save_point_trajectories,
                     train_agent)
from .occupancy import OccupancyTensor
from .planner import build_king_gridworld, two_room_spec
from .tabular import BINARY, LOG_RATIO, build_system, far_policy, solve_dual_chi2


def _load_env(spec: str):
    """Returns ("point", env) or ("grid", mdp)."""
    if spec == "pointreach":
        return "point", PointReachEnv()
    if spec == "two-room":
        return "grid", build_gridworld(two_room_spec())
    if spec == "two-room-king":
        return "grid", build_king_gridworld(two_room_spec())
    if spec.startswith("grid:"):
        parts = spec.split(":")
        h, w = (int(x) for x in parts[1].split("x"))
        slip = float(parts[2]) if len(parts) > 2 else 0.0
        return "grid", build_gridworld(GridworldSpec(
            height=h, width=w, walls=(), gamma=0.9, horizon=40,
            slip_prob=slip))
    if os.path.exists(spec):
        with open(spec) as fh:
            return "grid", from_json(fh.read())
    raise SystemExit(f"unknown environment spec {spec!r}")


def _policy_to_json(policy: GoalPolicy) -> dict:
    return {
        "kind": policy.kind,
        "max_action": policy.max_action,
        "sigma": policy.sigma,
        "weights": [w.tolist() for w in policy.params.weights],
        "biases": [b.tolist() for b in policy.params.biases],
    }


def _policy_from_json(doc: dict) -> GoalPolicy:
    params = MlpParams([np.array(w) for w in doc["weights"]],
                       [np.array(b) for b in doc["biases"]])
    return GoalPolicy(params, doc["kind"], doc["max_action"], doc["sigma"])


def cmd_collect(args) -> int:
    kind, env = _load_env(args.env)
    if kind == "point":
        trajs = collect_pointreach(env, args.n, args.horizon, seed=args.seed)
        save_point_trajectories(trajs, args.out)
    else:
        if args.behavior != "uniform":
            raise SystemExit(f"unknown behavior {args.behavior!r}")
        data = ds.collect(env, TabularPolicy.uniform(env), n_traj=args.n,
                          horizon=args.horizon, seed=args.seed,
                          descriptor="uniform-random")
        ds.save(data, args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_solve_tabular(args) -> int:
    kind, mdp = _load_env(args.env)
    if kind != "grid":
        raise SystemExit("solve-tabular needs a tabular environment")
    data = ds.load(args.data, mdp)
    d_off = ds.empirical_occupancy(data, mdp)
    reward = {"binary": BINARY, "logratio": LOG_RATIO}[args.reward]
    system = build_system(mdp, d_off, reward_choice=reward)
    v_star = solve_dual_chi2(system, mdp.gamma)
    policy = far_policy(system, v_star, mdp.gamma, d_off)
    with open(args.out, "w") as fh:
        json.dump({"probs": policy.probs.tolist()}, fh)
    print(f"wrote {args.out}")
    return 0


def cmd_train(args) -> int:
    kind, env = _load_env(args.env)
    os.makedirs(args.out, exist_ok=True)
    if kind == "point":
        trajs = load_point_trajectories(args.data)
        bank = bank_from_point(trajs, env)
        from dataclasses import replace
        config = replace(harness.POINT_CONFIG, seed=args.seed)
    else:
        data = ds.load(args.data, env)
        bank = bank_from_tabular(data, env, features="coords")
        from dataclasses import replace
        config = replace(harness.GRID_CONFIG, seed=args.seed,
                         gamma=env.gamma)
    agent = train_agent(args.algo, bank, config)
    with open(os.path.join(args.out, "config.json"), "w") as fh:
        json.dump({"algo": args.algo, "env": args.env, "seed": args.seed,
                   **{k: v for k, v in config.__dict__.items()}}, fh,
                  indent=2, default=str)
    loss_rows = []
    for phase, arr in agent.losses.items():
        for step, v in enumerate(np.asarray(arr).ravel()):
            loss_rows.append({"phase": phase, "step": step, "loss": float(v)})
    harness.write_csv(os.path.join(args.out, "losses.csv"), loss_rows)
    with open(os.path.join(args.out, "policy.json"), "w") as fh:
        json.dump(_policy_to_json(agent.policy), fh)
    if kind == "point":
        records = harness.evaluate_point(agent.policy, env,
                                         harness.EVAL_EPISODES,
                                         harness.EVAL_HORIZON, args.seed)
    else:
        actor = harness.neural_grid_actor(agent.policy, env, "coords")
        records = harness.evaluate_grid(actor, env, harness.EVAL_EPISODES,
                                        harness.EVAL_HORIZON, args.seed)
    harness.write_csv(os.path.join(args.out, "metrics.csv"),
                      harness.records_to_rows(records))
    ret = float(np.mean([r.discounted_return for r in records]))
    print(f"{args.algo}: return {ret:.3f} "
          f"success {np.mean([r.success for r in records]):.2f} "
          f"unstable {agent.unstable}")
    return 0


def cmd_evaluate(args) -> int:
    kind, env = _load_env(args.env)
    with open(args.policy) as fh:
        doc = json.load(fh)
    if "probs" in doc:  # tabular policy
        policy = TabularPolicy(np.array(doc["probs"]))
        actor = harness.tabular_actor(policy)
        records = harness.evaluate_grid(actor, env, args.episodes,
                                        args.horizon, args.seed)
    elif kind == "point":
        records = harness.evaluate_point(_policy_from_json(doc), env,
                                         args.episodes, args.horizon,
                                         args.seed)
    else:
        actor = harness.neural_grid_actor(_policy_from_json(doc), env, "coords")
        records = harness.evaluate_grid(actor, env, args.episodes,
                                        args.horizon, args.seed)
    if args.out:
        harness.write_csv(args.out, harness.records_to_rows(records))
    print(f"return {np.mean([r.discounted_return for r in records]):.3f} "
          f"success {np.mean([r.success for r in records]):.2f}")
    return 0


def _parse_seeds(text: str) -> list:
    return [int(s) for s in text.split(",") if s != ""]


def cmd_ablate_her(args) -> int:
    rows = harness.ablation_her(args.out, _parse_seeds(args.seeds),
                                master_seed=args.seed,
                                envs=tuple(args.envs.split(",")))
    failures = harness.check_her_directional(rows)
    for f in failures:
        print(f"FAIL {f}", file=sys.stderr)
    return 1 if failures else 0


def cmd_ablate_noise(args) -> int:
    levels = [float(x) for x in args.levels.split(",")]
    rows = harness.ablation_noise(args.out, _parse_seeds(args.seeds), levels,
                                  master_seed=args.seed)
    failures = harness.check_noise_directional(rows)
    for f in failures:
        print(f"FAIL {f}", file=sys.stderr)
    return 1 if failures else 0


def cmd_plan_transfer(args) -> int:
    rows = harness.plan_transfer(args.out, n_goals=args.n_goals,
                                 seed=args.seed)
    for arm in ("raw", "hierarchical", "oracle"):
        print(f"{arm}: {np.mean([r[arm] for r in rows]):.2f}")
    return 0


def cmd_run_all(args) -> int:
    return harness.run_all(args.manifest)


def cmd_selftest(args) -> int:
    """Quick oracle/property checks, one pass/fail line per invariant."""
    from .selftest import run_selftest
    return run_selftest()


def main(argv=None) -> int:
    p = argparse.ArgumentParser(prog="gofar")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("collect", help="roll out a behavior policy to a file")
    c.add_argument("--env", required=True)
    c.add_argument("--behavior", default="uniform")
    c.add_argument("--n", type=int, default=300)
    c.add_argument("--horizon", type=int, default=40)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out", required=True)
    c.set_defaults(fn=cmd_collect)

    c = sub.add_parser("solve-tabular", help="closed-form dual solve")
    c.add_argument("--env", required=True)
    c.add_argument("--data", required=True)
    c.add_argument("--reward", choices=["binary", "logratio"],
                   default="binary")
    c.add_argument("--out", required=True)
    c.set_defaults(fn=cmd_solve_tabular)

    c = sub.add_parser("train", help="train one algorithm on a dataset")
    c.add_argument("--algo", choices=list(ALGOS), required=True)
    c.add_argument("--env", required=True)
    c.add_argument("--data", required=True)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out", required=True)
    c.set_defaults(fn=cmd_train)

    c = sub.add_parser("evaluate", help="evaluate a stored policy")
    c.add_argument("--env", required=True)
    c.add_argument("--policy", required=True)
    c.add_argument("--episodes", type=int, default=50)
    c.add_argument("--horizon", type=int, default=50)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out", default="")
    c.set_defaults(fn=cmd_evaluate)

    c = sub.add_parser("ablate-her", help="relabeling ablation suite")
    c.add_argument("--out", required=True)
    c.add_argument("--seeds", default="0,1,2,3,4")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--envs", default="grid,pointreach")
    c.set_defaults(fn=cmd_ablate_her)

    c = sub.add_parser("ablate-noise", help="slip-robustness suite")
    c.add_argument("--out", required=True)
    c.add_argument("--seeds", default="0,1,2,3,4")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--levels", default="0.0,0.2,0.45")
    c.set_defaults(fn=cmd_ablate_noise)

    c = sub.add_parser("plan-transfer", help="two-room transfer experiment")
    c.add_argument("--out", required=True)
    c.add_argument("--n-goals", type=int, default=100)
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(fn=cmd_plan_transfer)

    c = sub.add_parser("run-all", help="execute a manifest of suites")
    c.add_argument("manifest")
    c.set_defaults(fn=cmd_run_all)

    c = sub.add_parser("selftest", help="oracle and property checks")
    c.set_defaults(fn=cmd_selftest)

    args = p.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    raise SystemExit(main())
