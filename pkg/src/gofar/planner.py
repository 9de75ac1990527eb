"""Goal-space value, subgoal planner, and cross-agent transfer.

The planner is trained action-free from source-domain transitions: states
enter only through phi, so the learned subgoal policy pi(g' | g, goal)
transfers to any agent sharing the goal space.  The value/policy pair is
obtained by reusing the tabular dual machinery on a synthetic "goal
dynamics" MDP whose states and actions are both goals (choosing an action
means choosing the next achieved goal; transitions are deterministic).

The transfer experiment pairs a two-room gridworld (4 moves + stay) as the
source with the same maze driven by a king-move agent (8 directions +
stay) as the target.  The target's scripted low-level controller is
greedy in Euclidean distance and therefore gets stuck on the dividing
wall for distant goals; the planner's subgoal chain through the doorway
is what rescues it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import OfflineDataset
from .mdp import GridworldSpec, TabularGCMDP, build_gridworld, sample_transition
from .tabular import RIDGE, ValueTable

KING_ACTIONS = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1),
                (1, -1), (1, 0), (1, 1), (0, 0)]

MAX_SLIP = 0.3


@dataclass(frozen=True)
class PlannerPolicy:
    """probs[current_achieved_goal, final_goal, next_goal]."""

    probs: np.ndarray  # (G, G, G)
    support: np.ndarray  # (G, G) observed goal-to-goal transitions

    def __post_init__(self):
        self.probs.setflags(write=False)
        self.support.setflags(write=False)

    def next_goal(self, current: int, final: int) -> int:
        return int(np.argmax(self.probs[current, final]))


@dataclass(frozen=True)
class SubgoalPlan:
    subgoals: tuple       # g1 ... gT, excludes the start
    final_goal: int
    complete: bool        # last subgoal equals final_goal
    cycle: bool = False   # stopped because the chain revisited a goal

    def __post_init__(self):
        if self.complete and self.subgoals and self.subgoals[-1] != self.final_goal:
            raise ValueError("complete plan must end at the final goal")


def goal_transition_stats(dataset: OfflineDataset, mdp: TabularGCMDP,
                          pool_goals: bool = True):
    """Action-free extraction of the source data's goal dynamics.

    Returns (d_ggg, start): d_ggg[g, g', c] the discounted occupancy of
    (phi(s) -> phi(s')) steps under commanded goal c, normalized per c, and
    the empirical distribution of starting achieved goals.  With
    pool_goals=True (the default) transitions are shared across commanded
    goals -- sound when the behavior is goal-agnostic and necessary for
    per-goal coverage at small dataset sizes.  Reads only states and times,
    never actions.
    """
    if dataset.mdp_fingerprint != mdp.fingerprint():
        raise ValueError("dataset was not collected on this source MDP "
                         f"({dataset.mdp_fingerprint} != {mdp.fingerprint()})")
    G = mdp.n_goals
    d = np.zeros((G, G, G))
    start = np.zeros(G)
    for traj in dataset.trajectories:
        start[mdp.phi[traj.transitions[0].s]] += 1.0
        c = traj.commanded_goal
        for tr in traj.transitions:
            d[mdp.phi[tr.s], mdp.phi[tr.s_next], c] += \
                (1.0 - mdp.gamma) * mdp.gamma ** tr.t
    if d.sum() <= 0:
        raise ValueError("no transitions in source dataset")
    if pool_goals:
        pooled = d.sum(axis=2)
        d = np.repeat((pooled / pooled.sum())[:, :, None], G, axis=2)
    else:
        mass = d.sum(axis=(0, 1))
        seen = mass > 0
        d[:, :, seen] /= mass[None, None, seen]
    return d, start / start.sum()


def _solve_goal_dual(d_ggg: np.ndarray, start: np.ndarray, gamma: float,
                     ridge: float = RIDGE):
    """Closed-form minimizer of the goal-space dual, one small quadratic
    solve per commanded goal.

    For commanded goal c the objective over v in R^G is
    (1-gamma) start^T v + sum_{i,j} d[i,j,c] (R(i,c) + gamma v_j - v_i + 1)^2 / 2
    with binary reward R(i,c) = 1{i = c}.  Returns (V (G,G), weights
    w[i,j,c] = max(0, advantage+1))."""
    G = d_ggg.shape[0]
    v_all = np.zeros((G, G))
    w_all = np.zeros((G, G, G))
    for c in range(G):
        d = d_ggg[:, :, c]
        if d.sum() <= 0:
            continue  # commanded goal never observed; value stays pinned at 0
        i_idx, j_idx = np.nonzero(d)
        w = d[i_idx, j_idx]
        r = (i_idx == c).astype(float)
        M = np.zeros((G, G))
        np.add.at(M, (i_idx, i_idx), w)
        np.add.at(M, (j_idx, j_idx), gamma * gamma * w)
        np.add.at(M, (i_idx, j_idx), -gamma * w)
        np.add.at(M, (j_idx, i_idx), -gamma * w)
        lin = np.zeros(G)
        np.add.at(lin, j_idx, gamma * w * (1.0 + r))
        np.add.at(lin, i_idx, -w * (1.0 + r))
        rhs = -(1.0 - gamma) * start - lin
        active = np.union1d(i_idx, j_idx)
        sub = M[np.ix_(active, active)] + ridge * np.eye(len(active))
        v = np.zeros(G)
        v[active] = np.linalg.solve(sub, rhs[active])
        v_all[:, c] = v
        adv = r + gamma * v[j_idx] - v[i_idx]
        w_all[i_idx, j_idx, c] = np.maximum(0.0, adv + 1.0)
    return v_all, w_all


def _check_deterministic(mdp: TabularGCMDP) -> None:
    slip = float(mdp.meta.get("slip_prob", 0.0))
    if slip > MAX_SLIP:
        raise ValueError(
            f"source slip_prob {slip} > {MAX_SLIP}: the goal-dynamics value "
            "assumes (near-)deterministic transitions; refusing to train")


def train_goal_value(dataset: OfflineDataset, mdp: TabularGCMDP,
                     pool_goals: bool = True) -> ValueTable:
    """V(phi(s); g) from source data, in closed form on the goal dynamics."""
    _check_deterministic(mdp)
    d_ggg, start = goal_transition_stats(dataset, mdp, pool_goals)
    v, _ = _solve_goal_dual(d_ggg, start, mdp.gamma)
    return ValueTable(v)


def train_planner(dataset: OfflineDataset, mdp: TabularGCMDP,
                  pool_goals: bool = True) -> PlannerPolicy:
    """Advantage-weighted regression of next achieved goals:
    pi(g' | g, c) proportional to max(0, advantage + 1) over observed
    goal-to-goal transitions.

    The behavior's visitation density over next goals is deliberately
    flattened to uniform-on-support before taking the regression: far from
    the commanded goal, adjacent advantage weights differ by well under a
    percent, so empirical visitation noise would otherwise dominate the
    plan's argmax and produce random-walk subgoal chains.  The value solve
    itself still uses the empirical occupancy."""
    _check_deterministic(mdp)
    d_ggg, start = goal_transition_stats(dataset, mdp, pool_goals)
    _, w = _solve_goal_dual(d_ggg, start, mdp.gamma)
    scores = (d_ggg > 0) * w  # (G, G', C)
    tot = scores.sum(axis=1, keepdims=True)
    G = d_ggg.shape[0]
    with np.errstate(invalid="ignore", divide="ignore"):
        pi = np.where(tot > 0, scores / tot, 1.0 / G)
    # reorder to [current, commanded, next]
    probs = np.transpose(pi, (0, 2, 1))
    return PlannerPolicy(probs=probs, support=d_ggg.sum(axis=2) > 0)


def plan(planner: PlannerPolicy, start_goal: int, final_goal: int,
         max_steps: int) -> SubgoalPlan:
    """Greedy autoregressive subgoal rollout; no replanning.

    Stops on reaching the final goal, on a revisited subgoal (reported as
    a cycle), or after max_steps.  Self-transitions are excluded from the
    argmax: a subgoal plan that stays put makes no progress by definition.
    """
    if start_goal == final_goal:
        return SubgoalPlan(subgoals=(), final_goal=final_goal, complete=True)
    chain = []
    seen = {start_goal}
    cur = start_goal
    for _ in range(max_steps):
        scores = planner.probs[cur, final_goal].copy()
        scores[cur] = -np.inf  # staying put is not a plan step
        nxt = int(np.argmax(scores))
        if nxt in seen:
            return SubgoalPlan(subgoals=tuple(chain), final_goal=final_goal,
                               complete=False, cycle=True)
        chain.append(nxt)
        seen.add(nxt)
        if nxt == final_goal:
            return SubgoalPlan(subgoals=tuple(chain), final_goal=final_goal,
                               complete=True)
        cur = nxt
    return SubgoalPlan(subgoals=tuple(chain), final_goal=final_goal,
                       complete=False)


# ---------------------------------------------------------------------------
# target domain: king-move agent on the same maze


def build_king_gridworld(spec: GridworldSpec) -> TabularGCMDP:
    """Same maze and goal space as build_gridworld, but the agent moves in
    8 directions (plus stay).  Blocked moves keep the agent in place."""
    base = build_gridworld(spec)
    cells = [tuple(c) for c in base.meta["cells"]]
    cell_to_state = {c: i for i, c in enumerate(cells)}
    n_states = len(cells)
    n_actions = len(KING_ACTIONS)
    det = np.zeros((n_states, n_actions, n_states))
    for cell, s in cell_to_state.items():
        for a, (dr, dc) in enumerate(KING_ACTIONS):
            nxt = (cell[0] + dr, cell[1] + dc)
            det[s, a, cell_to_state.get(nxt, s)] = 1.0
    slip = spec.slip_prob
    transition = (1.0 - slip) * det + slip * det.mean(axis=1, keepdims=True)
    meta = dict(base.meta)
    meta["kind"] = "gridworld-king"
    return TabularGCMDP(
        n_states=n_states, n_actions=n_actions, n_goals=base.n_goals,
        transition=transition, mu0=base.mu0, goal_dist=base.goal_dist,
        phi=base.phi, reward=base.reward, gamma=spec.gamma, meta=meta)


def greedy_controller(mdp: TabularGCMDP):
    """Scripted short-horizon controller: pick the action whose (modal)
    next cell minimizes Euclidean distance to the goal cell.  Reliable for
    nearby goals, blind to walls for distant ones."""
    cells = np.array(mdp.meta["cells"], dtype=float)
    goal_cell = np.zeros((mdp.n_goals, 2))
    for s in range(mdp.n_states):
        goal_cell[mdp.phi[s]] = cells[s]
    # modal next state per (s, a); with slip this is the intended move
    modal_next = np.argmax(mdp.transition, axis=2)

    def act(s: int, g: int) -> int:
        dists = np.linalg.norm(cells[modal_next[s]] - goal_cell[g], axis=1)
        return int(np.argmin(dists))

    return act


def hierarchical_execute(subgoal_plan: SubgoalPlan, low_level,
                         target_mdp: TabularGCMDP, start_state: int,
                         per_subgoal_budget: int,
                         rng: np.random.Generator):
    """Run the low-level controller through the subgoal chain; each subgoal
    gets at most per_subgoal_budget steps (exact cell tolerance), then the
    next one is issued regardless.  Success iff the final goal is achieved
    by the end."""
    sequence = list(subgoal_plan.subgoals)
    if not sequence or sequence[-1] != subgoal_plan.final_goal:
        sequence.append(subgoal_plan.final_goal)
    s = start_state
    states = [s]
    for sub in sequence:
        for _ in range(per_subgoal_budget):
            if mdp_phi(target_mdp, s) == sub:
                break
            s = sample_transition(target_mdp, s, low_level(s, sub), rng)
            states.append(s)
    return mdp_phi(target_mdp, s) == subgoal_plan.final_goal, states


def raw_execute(low_level, target_mdp: TabularGCMDP, start_state: int,
                final_goal: int, budget: int, rng: np.random.Generator):
    """Flat arm: the low-level controller aims straight at the final goal."""
    s = start_state
    states = [s]
    for _ in range(budget):
        if mdp_phi(target_mdp, s) == final_goal:
            break
        s = sample_transition(target_mdp, s, low_level(s, final_goal), rng)
        states.append(s)
    return mdp_phi(target_mdp, s) == final_goal, states


def oracle_execute(subgoal_plan: SubgoalPlan):
    """Teleporting subgoal executor: succeeds exactly when the plan itself
    reaches the final goal."""
    return subgoal_plan.complete


def mdp_phi(mdp: TabularGCMDP, s: int) -> int:
    return int(mdp.phi[s])


# ---------------------------------------------------------------------------
# the two-room transfer suite


def two_room_spec(slip_prob: float = 0.0, gamma: float = 0.95,
                  horizon: int = 60) -> GridworldSpec:
    """7x7 grid split by a wall at column 3 with a doorway at row 3."""
    walls = frozenset((r, 3) for r in range(7) if r != 3)
    return GridworldSpec(width=7, height=7, walls=walls, slip_prob=slip_prob,
                         gamma=gamma, horizon=horizon)


def distant_tasks(source_mdp: TabularGCMDP, n_tasks: int,
                  rng: np.random.Generator) -> list:
    """(start_state, final_goal) pairs across the dividing wall."""
    cells = np.array(source_mdp.meta["cells"])
    left = np.flatnonzero(cells[:, 1] < 3)
    right = np.flatnonzero(cells[:, 1] > 3)
    tasks = []
    for _ in range(n_tasks):
        if rng.random() < 0.5:
            s, t = int(rng.choice(left)), int(rng.choice(right))
        else:
            s, t = int(rng.choice(right)), int(rng.choice(left))
        tasks.append((s, int(source_mdp.phi[t])))
    return tasks


def transfer_suite(source_data: OfflineDataset, source_mdp: TabularGCMDP,
                   target_mdp: TabularGCMDP, n_tasks: int, seed: int,
                   per_subgoal_budget: int = 10, plan_steps: int = 30) -> list:
    """Evaluate raw / hierarchical / oracle arms on distant goals.

    Returns one dict per task: {start, goal, raw, hierarchical, oracle}.
    The planner is trained once, purely on source data.
    """
    planner = train_planner(source_data, source_mdp)
    low = greedy_controller(target_mdp)
    rng = np.random.default_rng(seed)
    rows = []
    n_legs_budget = plan_steps + 1
    for start, goal in distant_tasks(source_mdp, n_tasks, rng):
        p = plan(planner, mdp_phi(target_mdp, start), goal, plan_steps)
        hier, _ = hierarchical_execute(p, low, target_mdp, start,
                                       per_subgoal_budget, rng)
        raw_budget = per_subgoal_budget * max(1, len(p.subgoals))
        raw, _ = raw_execute(low, target_mdp, start, goal, raw_budget, rng)
        rows.append({"start": start, "goal": goal, "raw": bool(raw),
                     "hierarchical": bool(hier),
                     "oracle": bool(oracle_execute(p))})
    return rows
