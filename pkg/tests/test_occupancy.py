import numpy as np
import pytest

from gofar.fdiv import CHI2, KL, FDivergence
from gofar.mdp import (GridworldSpec, TabularPolicy, build_gridworld,
                       random_mdp)
from gofar.occupancy import (BINARY, DISCRIMINATOR, OccupancyTensor, entropy,
                             expected_return, flow_residual, lemma_b1_check,
                             lower_bound_slack, occupancy_series, prop1_gap,
                             soft_target, solve_occupancy)


def rand_case(rng, n_states=5, n_actions=3, n_goals=3):
    mdp = random_mdp(n_states, n_actions, n_goals, gamma=0.9, rng=rng)
    return mdp, TabularPolicy.random(mdp, rng)


def test_linear_solve_matches_series_oracle():
    rng = np.random.default_rng(0)
    for _ in range(10):
        mdp, pol = rand_case(rng)
        exact = solve_occupancy(mdp, pol)
        series = occupancy_series(mdp, pol, n_terms=400)
        assert np.abs(exact.d - series.d).max() < 1e-12


def test_occupancy_normalized_per_goal():
    rng = np.random.default_rng(1)
    mdp, pol = rand_case(rng)
    occ = solve_occupancy(mdp, pol)
    assert np.allclose(occ.d.sum(axis=(0, 1)), 1.0)
    assert (occ.d >= 0).all()


def test_flow_residual_zero_at_exact_occupancy():
    rng = np.random.default_rng(2)
    mdp, pol = rand_case(rng)
    assert flow_residual(mdp, solve_occupancy(mdp, pol)) < 1e-12


def test_flow_residual_detects_perturbation():
    rng = np.random.default_rng(3)
    mdp, pol = rand_case(rng)
    d = solve_occupancy(mdp, pol).d.copy()
    d[0, 0, 0] += 0.05
    assert flow_residual(mdp, OccupancyTensor(d)) > 1e-3


def test_policy_recovery_roundtrip():
    rng = np.random.default_rng(4)
    mdp, pol = rand_case(rng)
    occ = solve_occupancy(mdp, pol)
    assert np.abs(occ.policy() - pol.probs).max() < 1e-12


def test_expected_return_matches_value_iteration():
    rng = np.random.default_rng(5)
    mdp, pol = rand_case(rng)
    # independent oracle: per-goal state values solve (I - gamma P) v = r
    j = 0.0
    for g in range(mdp.n_goals):
        P = np.einsum("sa,sat->st", pol.probs[:, g, :], mdp.transition)
        v = np.linalg.solve(np.eye(mdp.n_states) - mdp.gamma * P,
                            mdp.reward[:, g])
        j += mdp.goal_dist[g] * float(mdp.mu0 @ v)
    assert expected_return(mdp, pol) == pytest.approx(j, rel=1e-10)


def test_entropy_uniform():
    assert entropy(np.full(8, 1 / 8)) == pytest.approx(np.log(8))
    assert entropy([1.0, 0.0]) == 0.0


def test_soft_target_normalized():
    mdp = random_mdp(5, 3, 3, gamma=0.9, rng=np.random.default_rng(6))
    assert np.allclose(soft_target(mdp).sum(axis=0), 1.0)


def test_return_entropy_identity():
    rng = np.random.default_rng(7)
    for _ in range(20):
        mdp, pol = rand_case(rng)
        lhs, rhs = prop1_gap(mdp, pol)
        assert abs(lhs - rhs) <= 1e-8


def test_offline_lower_bounds_nonnegative_slack():
    rng = np.random.default_rng(8)
    for _ in range(20):
        mdp, _ = rand_case(rng)
        behavior = TabularPolicy.uniform(mdp)
        pol = TabularPolicy.random(mdp, rng)
        d_off = solve_occupancy(mdp, behavior)
        for kind in (CHI2, KL):
            disc = lower_bound_slack(mdp, pol, d_off, FDivergence(kind),
                                     variant=DISCRIMINATOR)
            binary = lower_bound_slack(mdp, pol, d_off, FDivergence(kind),
                                       variant=BINARY)
            assert disc >= -1e-9
            assert binary >= disc - 1e-9


def test_state_marginal_kl_bounded_by_joint():
    rng = np.random.default_rng(9)
    for _ in range(20):
        mdp, p1 = rand_case(rng)
        p2 = TabularPolicy.random(mdp, rng)
        d1 = solve_occupancy(mdp, p1)
        d2 = solve_occupancy(mdp, p2)
        state_kl, sa_kl = lemma_b1_check(d1, d2, mdp.goal_dist)
        assert state_kl <= sa_kl + 1e-9


def test_lower_bound_coverage_violation():
    mdp = build_gridworld(GridworldSpec(height=2, width=2, gamma=0.9))
    d = np.zeros((mdp.n_states, mdp.n_actions, mdp.n_goals))
    d[0, :, :] = 1.0 / mdp.n_actions  # offline data never leaves state 0
    with pytest.raises(ValueError, match="coverage"):
        lower_bound_slack(mdp, TabularPolicy.uniform(mdp), OccupancyTensor(d),
                          FDivergence(CHI2))
