"""Experiment orchestration: evaluation rollouts, ablation suites, CSV
metrics, and the manifest runner.

All randomness is derived from a single suite seed via a documented
derivation (see derive_seed): no ambient entropy anywhere, so reruns with
the same manifest are byte-identical.  Metrics are computed twice per
episode -- streamed during the rollout and recomputed from the stored
trajectory -- and must agree exactly.
"""

from __future__ import annotations

import csv
import json
import os
import sys
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import dataset as ds
from .mdp import GridworldSpec, TabularGCMDP, TabularPolicy, build_gridworld, sample_transition
from .neural import (ALGOS, GoalPolicy, PointReachEnv, TrainConfig,
                     bank_from_point, bank_from_tabular, collect_pointreach,
                     train_agent)
from .planner import build_king_gridworld, transfer_suite, two_room_spec

CSV_COLUMNS = ["discounted_return", "success", "final_distance",
               "episode_length", "seed", "algo", "env", "her_ratio", "noise"]


@dataclass
class MetricsRecord:
    discounted_return: float
    success: bool
    final_distance: float
    episode_length: int
    seed: int
    algo: str = ""
    env: str = ""
    her_ratio: float = 0.0
    noise: float = 0.0


def derive_seed(master: int, suite_index: int, algo_index: int,
                seed_index: int) -> int:
    """Documented derivation: all run seeds are a pure function of the
    manifest seed and the (suite, algo, seed) indices."""
    return (master * 1000003 + suite_index * 10007
            + algo_index * 101 + seed_index) % (2**31 - 1)


def results_root(default: str = "results") -> str:
    return os.environ.get("GOFAR_RESULTS_DIR", default)


# ---------------------------------------------------------------------------
# evaluation


def _grid_goal_distance(mdp: TabularGCMDP, s: int, g: int) -> float:
    """Euclidean distance in cell coordinates when available, else 0/1."""
    cells = mdp.meta.get("cells")
    if cells is None:
        return float(mdp.phi[s] != g)
    here = np.asarray(cells[s], dtype=float)
    mask = mdp.phi == g
    goal_cells = np.asarray([cells[i] for i in np.flatnonzero(mask)], dtype=float)
    return float(np.min(np.linalg.norm(goal_cells - here, axis=1)))


def evaluate_grid(actor, mdp: TabularGCMDP, n_episodes: int, horizon: int,
                  seed: int, gamma: float | None = None) -> list:
    """actor(s, g, rng) -> action.  Reward is r(s_t; g) at each visited
    state; discounted_return = sum_t gamma^t r_t; success = goal achieved
    at the final state."""
    gamma = mdp.gamma if gamma is None else gamma
    records = []
    for ep in range(n_episodes):
        rng = np.random.default_rng((seed, ep))
        g = int(rng.choice(mdp.n_goals, p=mdp.goal_dist))
        s = int(rng.choice(mdp.n_states, p=mdp.mu0))
        states = [s]
        streamed = 0.0
        for t in range(horizon):
            streamed += gamma**t * mdp.reward[s, g]
            s = sample_transition(mdp, s, actor(s, g, rng), rng)
            states.append(s)
        recomputed = sum(gamma**t * mdp.reward[st, g]
                         for t, st in enumerate(states[:-1]))
        assert streamed == recomputed, "streamed/recomputed metric mismatch"
        records.append(MetricsRecord(
            discounted_return=streamed,
            success=bool(mdp.phi[states[-1]] == g),
            final_distance=_grid_goal_distance(mdp, states[-1], g),
            episode_length=horizon, seed=seed))
    return records


def evaluate_point(policy: GoalPolicy, env: PointReachEnv, n_episodes: int,
                   horizon: int, seed: int, gamma: float = 0.98) -> list:
    records = []
    for ep in range(n_episodes):
        rng = np.random.default_rng((seed, ep))
        pos, goal = env.reset(rng)
        positions = [pos]
        streamed = 0.0
        for t in range(horizon):
            streamed += gamma**t * env.reward(pos, goal)
            a = policy.act(pos, goal)
            pos = env.step(pos, a, rng)
            positions.append(pos)
        recomputed = sum(gamma**t * env.reward(p, goal)
                         for t, p in enumerate(positions[:-1]))
        assert streamed == recomputed, "streamed/recomputed metric mismatch"
        records.append(MetricsRecord(
            discounted_return=streamed,
            success=env.reward(positions[-1], goal) > 0,
            final_distance=float(np.linalg.norm(positions[-1] - goal)),
            episode_length=horizon, seed=seed))
    return records


def tabular_actor(policy: TabularPolicy, greedy: bool = True):
    def act(s, g, rng):
        row = policy.probs[s, g]
        if greedy:
            return int(np.argmax(row))
        return int(rng.choice(len(row), p=row))
    return act


def neural_grid_actor(policy: GoalPolicy, mdp: TabularGCMDP,
                      features: str = "onehot"):
    """Adapter from integer (s, g) to the bank's feature embedding."""
    from .neural import COORDS, bank_from_tabular  # feature scheme names
    if features == COORDS:
        scale = max(mdp.meta["height"] - 1, mdp.meta["width"] - 1, 1)
        eye_s = np.asarray(mdp.meta["cells"], dtype=float) / scale
        eye_g = np.zeros((mdp.n_goals, 2))
        for s in range(mdp.n_states):
            eye_g[mdp.phi[s]] = eye_s[s]
    else:
        eye_s = np.eye(mdp.n_states)
        eye_g = np.eye(mdp.n_goals)

    def act(s, g, rng):
        return policy.act(eye_s[s], eye_g[g])
    return act


# ---------------------------------------------------------------------------
# suite runners


GRID_CONFIG = TrainConfig(disc_steps=1000, value_steps=15000, policy_steps=8000,
                          hidden=64, value_avg_tail=0.3, policy_avg_tail=0.3)
GRID_TRAJ = 2000
POINT_CONFIG = TrainConfig(disc_steps=2400, value_steps=12000, policy_steps=8000,
                           hidden=64, disc_hidden=256, grad_penalty=0.001,
                           value_avg_tail=0.3, policy_avg_tail=0.3)
POINT_TRAJ = 2000
EVAL_EPISODES = 50
EVAL_HORIZON = 50


def _mean_records(records: list) -> dict:
    return {
        "discounted_return": float(np.mean([r.discounted_return for r in records])),
        "success": float(np.mean([r.success for r in records])),
        "final_distance": float(np.mean([r.final_distance for r in records])),
    }


def run_grid(algo: str, mdp: TabularGCMDP, run_seed: int,
             n_traj: int = GRID_TRAJ, horizon: int = 40,
             config: TrainConfig | None = None,
             features: str = "coords") -> tuple:
    """Collect, train, evaluate one (algo, seed) cell on a gridworld.
    Returns (summary dict, records, agent)."""
    config = replace(GRID_CONFIG if config is None else config,
                     seed=run_seed, gamma=mdp.gamma)
    behavior = TabularPolicy.uniform(mdp)
    data = ds.collect(mdp, behavior, n_traj=n_traj, horizon=horizon,
                      seed=run_seed, descriptor="uniform-random")
    bank = bank_from_tabular(data, mdp, features=features)
    agent = train_agent(algo, bank, config)
    records = evaluate_grid(neural_grid_actor(agent.policy, mdp, features),
                            mdp, EVAL_EPISODES, EVAL_HORIZON, run_seed)
    summary = _mean_records(records)
    summary["unstable"] = agent.unstable
    return summary, records, agent


def run_point(algo: str, env: PointReachEnv, run_seed: int,
              n_traj: int = POINT_TRAJ, horizon: int = 50,
              config: TrainConfig | None = None) -> tuple:
    config = replace(POINT_CONFIG if config is None else config,
                     seed=run_seed)
    trajs = collect_pointreach(env, n_traj, horizon, seed=run_seed,
                               expert_frac=0.1)
    bank = bank_from_point(trajs, env)
    agent = train_agent(algo, bank, config)
    records = evaluate_point(agent.policy, env, EVAL_EPISODES, EVAL_HORIZON,
                             run_seed, gamma=config.gamma)
    summary = _mean_records(records)
    summary["unstable"] = agent.unstable
    return summary, records, agent


def five_by_five(slip: float = 0.0) -> TabularGCMDP:
    return build_gridworld(GridworldSpec(width=5, height=5, slip_prob=slip,
                                         gamma=0.9, horizon=40))


def ablation_her(out_path: str, seeds: list, suite_index: int = 0,
                 master_seed: int = 0, envs: tuple = ("grid", "pointreach"),
                 algos: tuple = ALGOS) -> list:
    """One row per (env, algo, seed) with final metrics; failures are
    recorded as rows with error text and the suite continues."""
    rows = []
    for env_name in envs:
        for ai, algo in enumerate(algos):
            for si, seed in enumerate(seeds):
                run_seed = derive_seed(master_seed, suite_index, ai, si)
                her = 1.0 if algo in ("gofar+her", "gcsl", "wgcsl") else 0.0
                row = {"env": env_name, "algo": algo, "seed": seed,
                       "her_ratio": her, "noise": 0.0}
                try:
                    if env_name == "grid":
                        summary, _, _ = run_grid(algo, five_by_five(), run_seed)
                    else:
                        summary, _, _ = run_point(algo, PointReachEnv(), run_seed)
                    row.update(summary)
                    row["error"] = ""
                except Exception as e:  # failure of one run must not kill the suite
                    row.update({"discounted_return": np.nan, "success": np.nan,
                                "final_distance": np.nan, "unstable": True,
                                "error": str(e)})
                rows.append(row)
    if out_path:
        write_csv(out_path, rows)
    return rows


def ablation_noise(out_path: str, seeds: list, noise_levels: list,
                   suite_index: int = 1, master_seed: int = 0,
                   algos: tuple = ("gofar", "gcsl", "wgcsl")) -> list:
    """Slip-robustness suite: data is re-collected inside each noisy
    environment (the training-time MDP matches the evaluation MDP)."""
    rows = []
    for noise in noise_levels:
        mdp = five_by_five(slip=noise)
        for ai, algo in enumerate(algos):
            for si, seed in enumerate(seeds):
                run_seed = derive_seed(master_seed, suite_index, ai,
                                       si * 37 + int(noise * 100))
                row = {"env": "grid", "algo": algo, "seed": seed,
                       "her_ratio": 1.0 if algo != "gofar" else 0.0,
                       "noise": noise}
                try:
                    summary, _, _ = run_grid(algo, mdp, run_seed)
                    row.update(summary)
                    row["error"] = ""
                except Exception as e:
                    row.update({"discounted_return": np.nan, "success": np.nan,
                                "final_distance": np.nan, "unstable": True,
                                "error": str(e)})
                rows.append(row)
    if out_path:
        write_csv(out_path, rows)
    return rows


def plan_transfer(out_path: str, n_goals: int = 100, seed: int = 0,
                  n_traj: int = 400) -> list:
    """Two-room source -> king-move target transfer; per-goal success rows
    for the raw / hierarchical / oracle arms."""
    spec = two_room_spec()
    src = build_gridworld(spec)
    tgt = build_king_gridworld(spec)
    behavior = TabularPolicy.uniform(src)
    data = ds.collect(src, behavior, n_traj=n_traj, horizon=spec.horizon,
                      seed=seed, descriptor="uniform-random")
    rows = transfer_suite(data, src, tgt, n_goals, seed=seed + 1)
    if out_path:
        write_csv(out_path, rows)
    return rows


# ---------------------------------------------------------------------------
# CSV + manifest plumbing


def write_csv(path: str, rows: list) -> None:
    """Deterministic CSV: header from the first row's keys, repr-stable
    floats, '.' decimal separator, UTF-8, '\n' line endings."""
    if not rows:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write("")
        return
    cols = list(rows[0].keys())
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: _fmt(row.get(k)) for k in cols})


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def records_to_rows(records: list) -> list:
    return [asdict(r) for r in records]


def summarize(rows: list, group_keys: tuple, value_key: str) -> list:
    """mean +- stderr per group, recomputable from the per-seed rows."""
    groups = {}
    for row in rows:
        key = tuple(row[k] for k in group_keys)
        groups.setdefault(key, []).append(float(row[value_key]))
    out = []
    for key in sorted(groups, key=str):
        vals = np.array(groups[key])
        stderr = float(vals.std(ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else 0.0
        rec = dict(zip(group_keys, key))
        rec.update({"mean": float(vals.mean()), "stderr": stderr,
                    "n": len(vals)})
        out.append(rec)
    return out


def run_all(manifest_path: str) -> int:
    """Execute every suite in a manifest; returns a process exit status.

    Manifest schema: {"seed": int, "suites": [{"name", "kind", ...params}]}
    with kind in {"her", "noise", "transfer"}.  Results land under
    <results_root>/<suite>/..., plus a summary.csv per suite.  Exit status
    is nonzero iff a suite's directional check fails.
    """
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    master = int(manifest.get("seed", 0))
    root = results_root()
    os.makedirs(root, exist_ok=True)
    failures = []
    for i, suite in enumerate(manifest.get("suites", [])):
        name = suite["name"]
        kind = suite["kind"]
        suite_dir = os.path.join(root, name)
        os.makedirs(suite_dir, exist_ok=True)
        seeds = suite.get("seeds", [0, 1, 2])
        if kind == "her":
            rows = ablation_her(os.path.join(suite_dir, "metrics.csv"), seeds,
                                suite_index=i, master_seed=master,
                                envs=tuple(suite.get("envs", ("grid",))))
            _write_per_seed(suite_dir, rows)
            write_csv(os.path.join(suite_dir, "summary.csv"),
                      summarize(rows, ("env", "algo"), "discounted_return"))
            failures += check_her_directional(rows)
        elif kind == "noise":
            rows = ablation_noise(os.path.join(suite_dir, "metrics.csv"), seeds,
                                  suite.get("noise_levels", [0.0, 0.2, 0.45]),
                                  suite_index=i, master_seed=master)
            _write_per_seed(suite_dir, rows)
            write_csv(os.path.join(suite_dir, "summary.csv"),
                      summarize(rows, ("algo", "noise"), "discounted_return"))
            failures += check_noise_directional(rows)
        elif kind == "transfer":
            rows = plan_transfer(os.path.join(suite_dir, "metrics.csv"),
                                 n_goals=suite.get("n_goals", 100),
                                 seed=derive_seed(master, i, 0, 0))
            arms = [{"arm": a, "success_rate":
                     float(np.mean([r[a] for r in rows]))}
                    for a in ("raw", "hierarchical", "oracle")]
            write_csv(os.path.join(suite_dir, "summary.csv"), arms)
            hier = arms[1]["success_rate"]
            if not (hier > arms[0]["success_rate"] and
                    arms[2]["success_rate"] >= hier):
                failures.append(f"{name}: transfer ordering violated")
        else:
            failures.append(f"{name}: unknown suite kind {kind!r}")
    if failures:
        for f in failures:
            print(f"FAIL {f}", file=sys.stderr)
        return 1
    return 0


def _write_per_seed(suite_dir: str, rows: list) -> None:
    for row in rows:
        d = os.path.join(suite_dir, str(row["algo"]), f"seed_{row['seed']}")
        os.makedirs(d, exist_ok=True)
        write_csv(os.path.join(d, "metrics.csv"), [row])


def _mean_return(rows, env, algo):
    vals = [r["discounted_return"] for r in rows
            if r["env"] == env and r["algo"] == algo]
    return float(np.mean(vals)) if vals else float("nan")


def check_her_directional(rows: list) -> list:
    """The relabeling ablation's expected orderings, per environment."""
    failures = []
    envs = sorted({r["env"] for r in rows})
    for env in envs:
        gcsl = _mean_return(rows, env, "gcsl")
        gcsl_no = _mean_return(rows, env, "gcsl-noher")
        wgcsl = _mean_return(rows, env, "wgcsl")
        wgcsl_no = _mean_return(rows, env, "wgcsl-noher")
        gofar = _mean_return(rows, env, "gofar")
        gofar_her = _mean_return(rows, env, "gofar+her")
        if not (gcsl_no < 0.25 * gcsl):
            failures.append(f"her/{env}: gcsl-noher {gcsl_no:.3f} not < 25% of "
                            f"gcsl {gcsl:.3f}")
        if not (wgcsl_no < 0.25 * wgcsl):
            failures.append(f"her/{env}: wgcsl-noher {wgcsl_no:.3f} not < 25% "
                            f"of wgcsl {wgcsl:.3f}")
        if not abs(gofar - gofar_her) <= 0.10 * max(gofar, gofar_her):
            failures.append(f"her/{env}: gofar {gofar:.3f} vs gofar+her "
                            f"{gofar_her:.3f} differ by more than 10%")
        # the exp-conjugate blowup is a property of the continuous task;
        # on the gridworld it is seed-dependent (observed 2/5 to 4/5)
        if env != "pointreach":
            continue
        kl_rows = [r for r in rows if r["env"] == env and r["algo"] == "gofar-kl"]
        if kl_rows and sum(bool(r.get("unstable")) for r in kl_rows) * 2 < len(kl_rows):
            failures.append(f"her/{env}: gofar-kl flagged unstable in fewer "
                            "than half the seeds")
    return failures


def check_noise_directional(rows: list) -> list:
    failures = []
    levels = sorted({r["noise"] for r in rows})
    base = levels[0]
    algos = sorted({r["algo"] for r in rows})
    def ret(algo, noise):
        vals = [r["discounted_return"] for r in rows
                if r["algo"] == algo and r["noise"] == noise]
        return float(np.mean(vals))
    drops = {}
    for algo in algos:
        b = ret(algo, base)
        drops[algo] = {lvl: (b - ret(algo, lvl)) / b if b > 0 else np.nan
                       for lvl in levels[1:]}
    if 0.2 in levels[1:]:
        for algo in algos:
            if algo == "gofar":
                continue
            if not drops["gofar"][0.2] < drops[algo][0.2]:
                failures.append(f"noise: gofar drop {drops['gofar'][0.2]:.3f} "
                                f"not < {algo} drop {drops[algo][0.2]:.3f} at 0.2")
    if 0.45 in levels[1:]:
        for algo in algos:
            if not drops[algo][0.45] >= 0.40:
                failures.append(f"noise: {algo} drop {drops[algo][0.45]:.3f} "
                                "< 40% at slip 0.45")
    return failures
