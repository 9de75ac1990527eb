import numpy as np
import pytest

from gofar.dataset import collect
from gofar.mdp import GridworldSpec, TabularPolicy, build_gridworld
from gofar.planner import (KING_ACTIONS, SubgoalPlan, build_king_gridworld,
                           distant_tasks, goal_transition_stats,
                           greedy_controller, hierarchical_execute, mdp_phi,
                           plan, raw_execute, train_goal_value, train_planner,
                           transfer_suite, two_room_spec)


def two_room_data(n_traj=400, horizon=60, seed=0):
    mdp = build_gridworld(two_room_spec())
    data = collect(mdp, TabularPolicy.uniform(mdp), n_traj=n_traj,
                   horizon=horizon, seed=seed)
    return mdp, data


def test_two_room_layout():
    mdp = build_gridworld(two_room_spec())
    assert mdp.n_states == 49 - 6  # 7x7 minus the 6 wall cells
    cells = {tuple(c) for c in mdp.meta["cells"]}
    assert (3, 3) in cells  # doorway
    assert (0, 3) not in cells


def test_king_gridworld_same_goal_space():
    spec = two_room_spec()
    base = build_gridworld(spec)
    king = build_king_gridworld(spec)
    assert king.n_actions == len(KING_ACTIONS) == 9
    assert king.n_states == base.n_states
    assert np.array_equal(king.phi, base.phi)
    assert np.allclose(king.transition.sum(axis=2), 1.0)
    # diagonal moves exist: from the corner, action (1,1) moves diagonally
    cells = {tuple(c): i for i, c in enumerate(king.meta["cells"])}
    diag = KING_ACTIONS.index((1, 1))
    assert king.transition[cells[(0, 0)], diag, cells[(1, 1)]] == 1.0


def test_goal_stats_normalized_and_local():
    mdp, data = two_room_data(n_traj=100)
    d_ggg, start = goal_transition_stats(data, mdp)
    assert np.allclose(d_ggg.sum(axis=(0, 1)), 1.0)
    assert start.sum() == pytest.approx(1.0)
    # goal transitions only occur between adjacent cells (or self)
    cells = np.array(mdp.meta["cells"])
    for i, j in zip(*np.nonzero(d_ggg[:, :, 0])):
        assert np.abs(cells[i] - cells[j]).max() <= 1


def test_goal_stats_fingerprint_check():
    mdp, data = two_room_data(n_traj=10, horizon=10)
    other = build_gridworld(two_room_spec(gamma=0.9))
    with pytest.raises(ValueError, match="not collected"):
        goal_transition_stats(data, other)


def test_stochastic_source_refused():
    mdp = build_gridworld(two_room_spec(slip_prob=0.5))
    data = collect(mdp, TabularPolicy.uniform(mdp), n_traj=10, horizon=10,
                   seed=0)
    with pytest.raises(ValueError, match="slip"):
        train_planner(data, mdp)


def test_goal_value_peaks_at_commanded_goal():
    mdp, data = two_room_data()
    v = train_goal_value(data, mdp).v
    # for most commanded goals the highest-value achieved goal is the goal
    hits = sum(int(np.argmax(v[:, c]) == c) for c in range(mdp.n_goals))
    assert hits >= 0.9 * mdp.n_goals


def test_plan_reaches_goal_through_doorway():
    mdp, data = two_room_data()
    planner = train_planner(data, mdp)
    cells = {tuple(c): i for i, c in enumerate(mdp.meta["cells"])}
    start = int(mdp.phi[cells[(0, 0)]])
    goal = int(mdp.phi[cells[(6, 6)]])
    p = plan(planner, start, goal, max_steps=40)
    assert p.complete
    door = int(mdp.phi[cells[(3, 3)]])
    assert door in p.subgoals  # the only way across
    # consecutive subgoals are adjacent cells
    inv = np.array(mdp.meta["cells"])
    chain = [start] + list(p.subgoals)
    for a, b in zip(chain, chain[1:]):
        assert np.abs(inv[a] - inv[b]).max() <= 1


def test_plan_trivial_when_already_there():
    p = SubgoalPlan(subgoals=(), final_goal=3, complete=True)
    mdp, data = two_room_data(n_traj=50)
    planner = train_planner(data, mdp)
    assert plan(planner, 3, 3, 10) == p


def test_complete_plan_must_end_at_goal():
    with pytest.raises(ValueError):
        SubgoalPlan(subgoals=(1, 2), final_goal=5, complete=True)


def test_greedy_controller_reaches_near_goal_but_not_across_wall():
    king = build_king_gridworld(two_room_spec())
    low = greedy_controller(king)
    cells = {tuple(c): i for i, c in enumerate(king.meta["cells"])}
    rng = np.random.default_rng(0)
    near_ok, _ = raw_execute(low, king, cells[(0, 0)],
                             mdp_phi(king, cells[(2, 2)]), 10, rng)
    assert near_ok
    across, _ = raw_execute(low, king, cells[(0, 0)],
                            mdp_phi(king, cells[(0, 6)]), 60, rng)
    assert not across  # greedy head-on into the wall


def test_hierarchical_beats_raw_across_the_wall():
    mdp, data = two_room_data()
    king = build_king_gridworld(two_room_spec())
    rows = transfer_suite(data, mdp, king, n_tasks=20, seed=0)
    raw = np.mean([r["raw"] for r in rows])
    hier = np.mean([r["hierarchical"] for r in rows])
    oracle = np.mean([r["oracle"] for r in rows])
    assert hier > raw
    assert oracle >= hier


def test_distant_tasks_cross_the_wall():
    mdp = build_gridworld(two_room_spec())
    cells = np.array(mdp.meta["cells"])
    goal_col = np.zeros(mdp.n_goals)
    for s in range(mdp.n_states):
        goal_col[mdp.phi[s]] = cells[s][1]
    for start, goal in distant_tasks(mdp, 50, np.random.default_rng(1)):
        assert (cells[start][1] < 3) != (goal_col[goal] < 3)
