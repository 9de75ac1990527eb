import numpy as np
import pytest

from gofar.dataset import collect
from gofar.mdp import (GridworldSpec, TabularPolicy, build_gridworld,
                       random_mdp)
from gofar.occupancy import OccupancyTensor, flow_residual, solve_occupancy
from gofar.tabular import (BINARY, LOG_RATIO, ValueTable, build_system,
                           dual_gradient, dual_value, extract_policy,
                           far_policy, gofar_tabular_pipeline,
                           her_gap, optimal_goal_weights, primal_oracle,
                           recover_dstar, solve_dual_chi2, suboptimality_trend,
                           surrogate_mdp, total_variation)


def rand_instance(rng, n_states=4, n_actions=3, n_goals=3):
    mdp = random_mdp(n_states, n_actions, n_goals, gamma=0.9, rng=rng)
    d_off = solve_occupancy(mdp, TabularPolicy.uniform(mdp))
    return mdp, d_off


def test_value_table_rejects_nonfinite():
    with pytest.raises(ValueError):
        ValueTable(np.array([[np.inf]]))


def test_closed_form_is_stationary_point():
    rng = np.random.default_rng(0)
    mdp, d_off = rand_instance(rng)
    sys = build_system(mdp, d_off)
    v_star = solve_dual_chi2(sys, mdp.gamma)
    g = dual_gradient(sys, mdp.gamma, v_star.v.reshape(-1))
    assert np.abs(g).max() < 1e-6


def test_closed_form_minimizes_quadratic_dual():
    rng = np.random.default_rng(1)
    mdp, d_off = rand_instance(rng)
    sys = build_system(mdp, d_off)
    v_star = solve_dual_chi2(sys, mdp.gamma)
    base = dual_value(sys, mdp.gamma, v_star)
    for _ in range(20):
        pert = v_star.v + rng.normal(0, 0.1, v_star.v.shape)
        assert dual_value(sys, mdp.gamma, ValueTable(pert)) >= base - 1e-10


def test_strong_duality_against_primal_oracle():
    rng = np.random.default_rng(2)
    for _ in range(5):
        mdp, d_off = rand_instance(rng)
        sys = build_system(mdp, d_off)
        v_star = solve_dual_chi2(sys, mdp.gamma)
        dual = dual_value(sys, mdp.gamma, v_star, exact_conjugate=True)
        d_primal, primal = primal_oracle(mdp, d_off)
        assert abs(dual - primal) <= 1e-4
        d_dual = recover_dstar(sys, v_star, mdp.gamma)
        assert total_variation(d_dual, d_primal, mdp.goal_dist) <= 1e-3


def test_recovered_dstar_satisfies_flow():
    rng = np.random.default_rng(3)
    mdp, d_off = rand_instance(rng)
    sys = build_system(mdp, d_off)
    v_star = solve_dual_chi2(sys, mdp.gamma)
    d_star = recover_dstar(sys, v_star, mdp.gamma)
    assert flow_residual(mdp, d_star) < 1e-5


def test_goal_weighting_equivalence():
    # weighted regression on commanded goals equals the per-goal normalized
    # d* route
    rng = np.random.default_rng(4)
    for _ in range(10):
        mdp, d_off = rand_instance(rng)
        sys = build_system(mdp, d_off)
        v_star = solve_dual_chi2(sys, mdp.gamma)
        via_dstar = extract_policy(recover_dstar(sys, v_star, mdp.gamma))
        direct = far_policy(sys, v_star, mdp.gamma, d_off)
        assert np.abs(via_dstar.probs - direct.probs).max() < 1e-6


def test_log_ratio_reward_requires_coverage():
    mdp = build_gridworld(GridworldSpec(height=2, width=2, gamma=0.9))
    d = np.zeros((mdp.n_states, mdp.n_actions, mdp.n_goals))
    d[0, :, :] = 1.0 / mdp.n_actions
    with pytest.raises(ValueError, match="coverage"):
        build_system(mdp, OccupancyTensor(d), reward_choice=LOG_RATIO)


def test_log_ratio_reward_runs_with_full_support():
    rng = np.random.default_rng(5)
    mdp, d_off = rand_instance(rng)
    sys = build_system(mdp, d_off, reward_choice=LOG_RATIO)
    v_star = solve_dual_chi2(sys, mdp.gamma)
    assert np.isfinite(v_star.v).all()


def test_unknown_reward_choice_rejected():
    rng = np.random.default_rng(6)
    mdp, d_off = rand_instance(rng)
    with pytest.raises(ValueError):
        build_system(mdp, d_off, reward_choice="squared")


def test_deficient_support_rejected():
    rng = np.random.default_rng(7)
    mdp, _ = rand_instance(rng)
    empty = OccupancyTensor(np.zeros((mdp.n_states, mdp.n_actions,
                                      mdp.n_goals)))
    sys = build_system(mdp, empty)
    with pytest.raises(ValueError, match="support"):
        solve_dual_chi2(sys, mdp.gamma)


def test_optimal_goal_weights_normalized_on_support():
    rng = np.random.default_rng(8)
    mdp, d_off = rand_instance(rng)
    data = collect(mdp, TabularPolicy.uniform(mdp), n_traj=50, horizon=20,
                   seed=0)
    sys = build_system(mdp, d_off)
    v_star = solve_dual_chi2(sys, mdp.gamma)
    w = optimal_goal_weights(sys, v_star, mdp.gamma, data, mdp)
    sums = np.nansum(w, axis=2)
    seen = ~np.isnan(w).all(axis=2)
    assert np.allclose(sums[seen], 1.0)


def test_her_gap_finite_and_bounded_exclusion():
    rng = np.random.default_rng(9)
    mdp, d_off = rand_instance(rng)
    data = collect(mdp, TabularPolicy.uniform(mdp), n_traj=100, horizon=20,
                   seed=1)
    sys = build_system(mdp, d_off)
    v_star = solve_dual_chi2(sys, mdp.gamma)
    gap, excluded = her_gap(sys, v_star, mdp.gamma, data, mdp)
    assert np.isfinite(gap)
    assert 0.0 <= excluded <= 1.0


def test_surrogate_mdp_valid_and_converges():
    mdp = build_gridworld(GridworldSpec(height=3, width=3, gamma=0.9))
    data = collect(mdp, TabularPolicy.uniform(mdp), n_traj=500, horizon=30,
                   seed=2)
    hat = surrogate_mdp(data, mdp)
    assert np.allclose(hat.transition.sum(axis=2), 1.0)
    # deterministic dynamics: the MLE should be nearly exact on seen rows
    seen_err = np.abs(hat.transition - mdp.transition).max()
    assert seen_err < 1e-9


def test_pipeline_beats_behavior_on_gridworld():
    from gofar.occupancy import expected_return
    mdp = build_gridworld(GridworldSpec(height=3, width=3, gamma=0.9))
    behavior = TabularPolicy.uniform(mdp)
    d_off = solve_occupancy(mdp, behavior)
    pi = gofar_tabular_pipeline(mdp, d_off)
    assert expected_return(mdp, pi) > expected_return(mdp, behavior)


def test_suboptimality_trend_shapes():
    mdp = build_gridworld(GridworldSpec(height=3, width=3, gamma=0.9))
    out = suboptimality_trend(mdp, TabularPolicy.uniform(mdp),
                              n_grid=[10, 50], seeds=[0, 1], horizon=20)
    assert [n for n, _ in out] == [10, 50]
    assert all(np.isfinite(g) for _, g in out)
