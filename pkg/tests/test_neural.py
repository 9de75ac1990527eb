import numpy as np
import pytest

from gofar.dataset import RelabelSpec, collect
from gofar.fdiv import CHI2, FDivergence
from gofar.mdp import GridworldSpec, TabularPolicy, build_gridworld
from gofar.neural import (ALGOS, DISCRETE, GAUSSIAN, GOFAR, GoalPolicy,
                          ONEHOT, PointReachEnv, TrainConfig,
                          bank_from_point, bank_from_tabular, binary_reward_fn,
                          collect_pointreach, disc_reward_fn,
                          load_point_trajectories, pair_dim, pair_input,
                          reward_from_disc, save_point_trajectories,
                          train_agent, train_discriminator, train_policy_far,
                          train_value, value_of)

TINY = TrainConfig(disc_steps=60, value_steps=150, policy_steps=120,
                   batch=64, gamma=0.9, hidden=32, seed=0)


def grid_bank(n_traj=60, horizon=15, seed=0):
    mdp = build_gridworld(GridworldSpec(height=3, width=3, gamma=0.9))
    data = collect(mdp, TabularPolicy.uniform(mdp), n_traj=n_traj,
                   horizon=horizon, seed=seed)
    return mdp, bank_from_tabular(data, mdp, features=ONEHOT)


def test_pair_input_appends_offset_when_dims_match():
    s = np.array([[1.0, 2.0]])
    g = np.array([[0.5, 0.5]])
    out = pair_input(s, g)
    assert out.shape == (1, 6)
    assert np.allclose(out[0, 4:], [0.5, 1.5])
    assert pair_dim(2, 2) == 6


def test_pair_input_plain_concat_when_dims_differ():
    out = pair_input(np.ones((1, 3)), np.ones((1, 2)))
    assert out.shape == (1, 5)
    assert pair_dim(3, 2) == 5


def test_bank_from_tabular_counts_and_features():
    mdp, bank = grid_bank(n_traj=10, horizon=8)
    assert bank.n == 80
    assert bank.state_dim == mdp.n_states
    assert bank.goal_dim == mdp.n_goals
    # achieved-goal features follow phi
    s_idx = bank.s_feat.argmax(axis=1)
    assert (bank.ag_s_feat.argmax(axis=1) == mdp.phi[s_idx]).all()


def test_discounted_sampling_prefers_early_steps():
    _, bank = grid_bank()
    probs = bank.discounted_probs(0.9)
    assert probs.sum() == pytest.approx(1.0)
    early = probs[bank.t == 0].mean()
    late = probs[bank.t == bank.t.max()].mean()
    assert early > late


def test_bank_reward_is_goal_indicator():
    mdp, bank = grid_bank(n_traj=5)
    idx = np.arange(bank.n)
    r = bank.reward(idx, bank.g_feat)
    s_idx = bank.s_feat.argmax(axis=1)
    g_idx = bank.g_feat.argmax(axis=1)
    assert np.array_equal(r, (mdp.phi[s_idx] == g_idx).astype(float))


def test_relabel_draws_future_achieved_goals():
    _, bank = grid_bank(n_traj=10)
    rng = np.random.default_rng(0)
    idx = bank.sample(rng, 128, 0.9, False)
    before = bank.relabel_calls
    g, r, lag = bank.relabel(idx, rng, her_ratio=1.0)
    assert bank.relabel_calls == before + 1
    assert (lag >= 1).all()
    # each relabeled goal is achieved by some future next-state of the
    # same trajectory
    for k, i in enumerate(idx):
        future = bank.ag_sn_feat[i:bank.traj_hi[i]]
        assert (future == g[k]).all(axis=1).any()
    assert np.array_equal(r, bank.reward(idx, g))


def test_discriminator_separates_goal_pairs():
    _, bank = grid_bank(n_traj=100, horizon=20)
    cfg = TrainConfig(disc_steps=400, value_steps=1, policy_steps=1,
                      batch=128, gamma=0.9, hidden=32, seed=0,
                      grad_penalty=0.001)
    res = train_discriminator(bank, cfg)
    idx = np.arange(bank.n)
    r = reward_from_disc(res.params, bank.s_feat, bank.g_feat)
    hit = bank.reward(idx, bank.g_feat) > 0
    assert hit.any() and (~hit).any()
    assert r[hit].mean() > r[~hit].mean() + 1.0


def test_value_training_reward_shift_is_exact_reparametrization():
    # training against r + c with centering enabled yields exactly the same
    # network plus a c/(1-gamma) output shift, for any constant c
    _, bank = grid_bank()
    base = binary_reward_fn(bank)
    shift = 5.0

    def shifted(idx, g_feat):
        return base(idx, g_feat) + shift

    cfg = TINY
    v1 = train_value(bank, base, FDivergence(CHI2), cfg)
    v2 = train_value(bank, shifted, FDivergence(CHI2), cfg)
    out1 = value_of(v1.params, bank.s_feat, bank.g_feat)
    out2 = value_of(v2.params, bank.s_feat, bank.g_feat)
    assert np.abs(out2 - out1 - shift / (1.0 - cfg.gamma)).max() < 1e-9


def test_far_policy_path_never_relabels():
    _, bank = grid_bank()
    agent = train_agent(GOFAR, bank, TINY)
    assert bank.relabel_calls == 0
    assert agent.value is not None
    assert np.isfinite(agent.policy.params.flatten()).all()


def test_her_arms_do_relabel():
    _, bank = grid_bank()
    train_agent("gcsl", bank, TINY)
    assert bank.relabel_calls > 0


def test_gofar_her_relabels_once_up_front():
    _, bank = grid_bank()
    train_agent("gofar+her", bank, TINY)
    assert bank.relabel_calls == 1


def test_wgcsl_smoke():
    _, bank = grid_bank()
    agent = train_agent("wgcsl", bank, TINY)
    assert not agent.unstable
    assert np.isfinite(agent.losses["policy"]).all()


def test_train_agent_rejects_unknown_algo():
    _, bank = grid_bank(n_traj=5)
    with pytest.raises(ValueError):
        train_agent("dqn", bank, TINY)


def test_all_algo_names_dispatch():
    _, bank = grid_bank(n_traj=30, horizon=10)
    cfg = TrainConfig(disc_steps=10, value_steps=20, policy_steps=20,
                      batch=32, gamma=0.9, hidden=16, seed=0)
    for algo in ALGOS:
        agent = train_agent(algo, bank, cfg)
        assert agent.policy.kind == DISCRETE


def test_goal_policy_discrete_greedy_is_argmax():
    _, bank = grid_bank(n_traj=5)
    agent = train_agent("gcsl-noher", bank, TINY)
    s, g = bank.s_feat[:1], bank.g_feat[:1]
    a = agent.policy.act(s, g)
    assert a == int(np.argmax(agent.policy.action_probs(s, g)[0]))
    probs = agent.policy.action_probs(bank.s_feat[:10], bank.g_feat[:10])
    assert np.allclose(probs.sum(axis=1), 1.0)


def test_goal_policy_gaussian_mode_bounded():
    env = PointReachEnv()
    trajs = collect_pointreach(env, 10, 10, seed=0)
    bank = bank_from_point(trajs, env)
    cfg = TrainConfig(disc_steps=10, value_steps=20, policy_steps=30,
                      batch=32, gamma=0.9, hidden=16, seed=0)
    agent = train_agent("gcsl", bank, cfg)
    assert agent.policy.kind == GAUSSIAN
    a = agent.policy.act(np.array([0.2, 0.2]), np.array([0.9, 0.9]))
    assert np.abs(a).max() <= env.max_action + 1e-12


def test_collect_pointreach_reproducible_and_expert_reaches():
    env = PointReachEnv()
    t1 = collect_pointreach(env, 5, 20, seed=3)
    t2 = collect_pointreach(env, 5, 20, seed=3)
    for a, b in zip(t1, t2):
        assert np.array_equal(a.positions, b.positions)
    expert = collect_pointreach(env, 20, 60, seed=4, expert_frac=1.0)
    final_dist = np.mean([np.linalg.norm(tr.positions[-1] - tr.goal)
                          for tr in expert])
    assert final_dist < 0.05


def test_point_trajectories_roundtrip(tmp_path):
    env = PointReachEnv()
    trajs = collect_pointreach(env, 4, 6, seed=5)
    path = tmp_path / "trajs.npz"
    save_point_trajectories(trajs, path)
    back = load_point_trajectories(path)
    assert len(back) == 4
    for a, b in zip(trajs, back):
        assert np.array_equal(a.positions, b.positions)
        assert np.array_equal(a.actions, b.actions)
        assert np.array_equal(a.goal, b.goal)


def test_env_clips_action_norm():
    env = PointReachEnv()
    a = env.clip_action(np.array([1.0, 1.0]))
    assert np.linalg.norm(a) <= env.max_action + 1e-12
