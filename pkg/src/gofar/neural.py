"""Sample-based goal-conditioned training with small numpy networks.

The pipeline mirrors the tabular route but works from transitions only:
a logistic discriminator supplies the reward, a value network minimizes
the dual objective by SGD, and the policy is fit by advantage-weighted
regression on commanded goals (no hindsight relabeling).  GCSL and WGCSL
baselines share the same data plumbing and do use relabeling.

Works on two feature spaces: one-hot embedded tabular gridworlds
(discrete actions) and a continuous 2-D point-reaching task (Gaussian
policy with fixed deviation).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .dataset import FUTURE_UNIFORM, NONE, OfflineDataset, RelabelSpec
from .fdiv import CHI2, KL, FDivergence, f_star_value, weight
from .mdp import TabularGCMDP
from .nets import (Adam, MlpParams, ParamAverager, disc_penalty_grads,
                   init_mlp, mlp_forward, mlp_grad, sigmoid)

DISCRETE = "discrete"
GAUSSIAN = "gaussian"


@dataclass(frozen=True)
class PointReachEnv:
    """Point agent on the unit square; velocity commands clipped to radius
    max_action; binary reward 1 iff within success_tol of the goal."""

    success_tol: float = 0.05
    noise_sigma: float = 0.0
    max_action: float = 0.05

    def reset(self, rng: np.random.Generator):
        return rng.uniform(0, 1, 2), rng.uniform(0, 1, 2)

    def clip_action(self, a: np.ndarray) -> np.ndarray:
        n = float(np.linalg.norm(a))
        if n > self.max_action:
            a = a * (self.max_action / n)
        return a

    def step(self, pos: np.ndarray, action: np.ndarray,
             rng: np.random.Generator) -> np.ndarray:
        a = self.clip_action(np.asarray(action, dtype=float))
        nxt = pos + a
        if self.noise_sigma > 0:
            nxt = nxt + rng.normal(0.0, self.noise_sigma, 2)
        return np.clip(nxt, 0.0, 1.0)

    def reward(self, pos: np.ndarray, goal: np.ndarray) -> float:
        return float(np.linalg.norm(pos - goal) <= self.success_tol)


@dataclass
class TrainConfig:
    lr_value: float = 5e-4
    lr_policy: float = 5e-4
    lr_disc: float = 5e-4
    batch: int = 256
    gamma: float = 0.98
    grad_penalty: float = 0.01
    disc_steps: int = 1000
    value_steps: int = 5000
    policy_steps: int = 2000
    hidden: int = 64
    seed: int = 0
    exp_clip: float = 10.0
    policy_sigma: float = 0.1
    sample_discounted: bool = True
    value_avg_tail: float = 0.0
    policy_avg_tail: float = 0.0
    center_reward: bool = True
    disc_hidden: int | None = None

    def __post_init__(self):
        if min(self.lr_value, self.lr_policy, self.lr_disc) <= 0:
            raise ValueError("learning rates must be positive")
        if min(self.batch, self.disc_steps, self.value_steps,
               self.policy_steps, self.hidden) <= 0:
            raise ValueError("counts must be positive")
        if not (0 < self.gamma < 1):
            raise ValueError("gamma must lie in (0, 1)")


class TransitionBank:
    """Flat transition store with featurized states/goals, trajectory
    boundaries for hindsight sampling, and a relabel-call counter so the
    no-relabeling contract of the main algorithm can be asserted."""

    def __init__(self, s_feat, a, sn_feat, g_feat, ag_s_feat, ag_sn_feat,
                 t, traj_lo, traj_hi, s0_feat, g0_feat, action_kind,
                 goal_tol, n_actions=0, max_action=0.0):
        self.s_feat = np.asarray(s_feat, dtype=float)
        self.a = np.asarray(a)
        self.sn_feat = np.asarray(sn_feat, dtype=float)
        self.g_feat = np.asarray(g_feat, dtype=float)        # commanded
        self.ag_s_feat = np.asarray(ag_s_feat, dtype=float)  # phi(s)
        self.ag_sn_feat = np.asarray(ag_sn_feat, dtype=float)  # phi(s_next)
        self.t = np.asarray(t, dtype=int)
        self.traj_lo = np.asarray(traj_lo, dtype=int)  # first index of own traj
        self.traj_hi = np.asarray(traj_hi, dtype=int)  # one past last
        self.s0_feat = np.asarray(s0_feat, dtype=float)
        self.g0_feat = np.asarray(g0_feat, dtype=float)
        self.action_kind = action_kind
        self.goal_tol = float(goal_tol)
        self.n_actions = n_actions
        self.max_action = max_action
        self.relabel_calls = 0
        self.n = len(self.t)
        if self.n == 0:
            raise ValueError("empty transition bank")
        self._cdf_cache = {}

    @property
    def state_dim(self):
        return self.s_feat.shape[1]

    @property
    def goal_dim(self):
        return self.g_feat.shape[1]

    def discounted_probs(self, gamma: float) -> np.ndarray:
        p = gamma ** self.t
        return p / p.sum()

    def sample(self, rng: np.random.Generator, batch: int, gamma: float,
               discounted: bool) -> np.ndarray:
        if discounted:
            if gamma not in self._cdf_cache:
                self._cdf_cache[gamma] = np.cumsum(self.discounted_probs(gamma))
            cdf = self._cdf_cache[gamma]
            return np.searchsorted(cdf, rng.random(batch), side="right").clip(0, self.n - 1)
        return rng.integers(0, self.n, size=batch)

    def initial_batch(self, rng: np.random.Generator, batch: int):
        idx = rng.integers(0, len(self.s0_feat), size=batch)
        return self.s0_feat[idx], self.g0_feat[idx]

    def reward(self, idx: np.ndarray, g_feat: np.ndarray) -> np.ndarray:
        """Binary reward of the *current* states against arbitrary goals."""
        dist = np.linalg.norm(self.ag_s_feat[idx] - g_feat, axis=1)
        return (dist <= self.goal_tol).astype(float)

    def relabel(self, idx: np.ndarray, rng: np.random.Generator,
                her_ratio: float):
        """Hindsight goals: with probability her_ratio replace the commanded
        goal by the achieved goal of a uniformly drawn future step of the
        same trajectory.  Returns (g_feat, reward, lag) with lag = number of
        steps ahead at which the relabeled goal is achieved (0 = commanded)."""
        self.relabel_calls += 1
        g = self.g_feat[idx].copy()
        lag = np.zeros(len(idx), dtype=int)
        flip = rng.random(len(idx)) < her_ratio
        for k in np.flatnonzero(flip):
            i = idx[k]
            j = int(rng.integers(i, self.traj_hi[i]))
            g[k] = self.ag_sn_feat[j]
            lag[k] = j - i + 1  # goal achieved at step j's next state
        return g, self.reward(idx, g), lag


ONEHOT = "onehot"
COORDS = "coords"


def bank_from_tabular(dataset: OfflineDataset, mdp: TabularGCMDP,
                      features: str = ONEHOT) -> TransitionBank:
    """Embed a tabular dataset with discrete actions.

    features=ONEHOT uses indicator vectors e_s / e_g (exact tabular
    embedding, no generalization).  features=COORDS uses normalized cell
    coordinates for gridworlds, which lets the networks generalize across
    nearby states and goals the way the continuous tasks do."""
    if features == COORDS:
        cells = mdp.meta.get("cells")
        if cells is None:
            raise ValueError("coordinate features need a gridworld with cells")
        scale = max(mdp.meta["height"] - 1, mdp.meta["width"] - 1, 1)
        eye_s = np.asarray(cells, dtype=float) / scale
        goal_xy = np.zeros((mdp.n_goals, 2))
        for s in range(mdp.n_states):
            goal_xy[mdp.phi[s]] = eye_s[s]
        eye_g = goal_xy
        goal_tol = 1e-9
    elif features == ONEHOT:
        eye_s = np.eye(mdp.n_states)
        eye_g = np.eye(mdp.n_goals)
        goal_tol = 1e-9
    else:
        raise ValueError(f"unknown feature scheme {features!r}")
    preimage_empty = np.setdiff1d(np.arange(mdp.n_goals), mdp.phi)
    if preimage_empty.size:
        mass = float(mdp.goal_dist[preimage_empty].sum())
        warnings.warn(f"goals {preimage_empty.tolist()} have no satisfying "
                      f"states (goal mass {mass:.3f}); no positives available")
    s, a, sn, g, t, lo, hi = [], [], [], [], [], [], []
    s0, g0 = [], []
    pos = 0
    for traj in dataset.trajectories:
        n = len(traj.transitions)
        s0.append(traj.transitions[0].s)
        g0.append(traj.commanded_goal)
        for tr in traj.transitions:
            s.append(tr.s)
            a.append(tr.a)
            sn.append(tr.s_next)
            g.append(traj.commanded_goal)
            t.append(tr.t)
            lo.append(pos)
            hi.append(pos + n)
        pos += n
    s = np.array(s)
    sn = np.array(sn)
    return TransitionBank(
        s_feat=eye_s[s], a=np.array(a, dtype=int), sn_feat=eye_s[sn],
        g_feat=eye_g[np.array(g)], ag_s_feat=eye_g[mdp.phi[s]],
        ag_sn_feat=eye_g[mdp.phi[sn]], t=t, traj_lo=lo, traj_hi=hi,
        s0_feat=eye_s[np.array(s0)], g0_feat=eye_g[np.array(g0)],
        action_kind=DISCRETE, goal_tol=goal_tol, n_actions=mdp.n_actions)


@dataclass(frozen=True)
class PointTrajectory:
    positions: np.ndarray  # (H+1, 2)
    actions: np.ndarray    # (H, 2)
    goal: np.ndarray       # (2,)


def collect_pointreach(env: PointReachEnv, n_traj: int, horizon: int,
                       seed: int, expert_frac: float = 0.1) -> list:
    """Mixture behavior: expert_frac of trajectories head straight for the
    commanded goal (with small action noise), the rest act uniformly."""
    master = np.random.default_rng(seed)
    out = []
    for _ in range(n_traj):
        rng = np.random.default_rng(master.integers(2**63 - 1))
        pos, goal = env.reset(rng)
        expert = rng.random() < expert_frac
        positions = [pos]
        actions = []
        for _ in range(horizon):
            if expert:
                a = env.clip_action(goal - pos) + rng.normal(0, 0.005, 2)
            else:
                a = rng.uniform(-env.max_action, env.max_action, 2)
            a = env.clip_action(a)
            pos = env.step(pos, a, rng)
            actions.append(a)
            positions.append(pos)
        out.append(PointTrajectory(np.array(positions), np.array(actions), goal))
    return out


def bank_from_point(trajectories: list, env: PointReachEnv) -> TransitionBank:
    s, a, sn, g, t, lo, hi = [], [], [], [], [], [], []
    s0, g0 = [], []
    pos = 0
    for traj in trajectories:
        n = len(traj.actions)
        s0.append(traj.positions[0])
        g0.append(traj.goal)
        for i in range(n):
            s.append(traj.positions[i])
            a.append(traj.actions[i])
            sn.append(traj.positions[i + 1])
            g.append(traj.goal)
            t.append(i)
            lo.append(pos)
            hi.append(pos + n)
        pos += n
    s = np.array(s)
    sn = np.array(sn)
    return TransitionBank(
        s_feat=s, a=np.array(a), sn_feat=sn, g_feat=np.array(g),
        ag_s_feat=s, ag_sn_feat=sn, t=t, traj_lo=lo, traj_hi=hi,
        s0_feat=np.array(s0), g0_feat=np.array(g0),
        action_kind=GAUSSIAN, goal_tol=env.success_tol,
        max_action=env.max_action)


def save_point_trajectories(trajectories: list, path: str) -> None:
    """Compressed archive, one positions/actions/goal triple per trajectory."""
    arrs = {}
    for i, tr in enumerate(trajectories):
        arrs[f"p{i}"] = tr.positions
        arrs[f"a{i}"] = tr.actions
        arrs[f"g{i}"] = tr.goal
    np.savez_compressed(path, n=np.array(len(trajectories)), **arrs)


def load_point_trajectories(path: str) -> list:
    with np.load(path) as z:
        return [PointTrajectory(z[f"p{i}"], z[f"a{i}"], z[f"g{i}"])
                for i in range(int(z["n"]))]


# ---------------------------------------------------------------------------
# discriminator


def pair_input(s_feat: np.ndarray, g_feat: np.ndarray) -> np.ndarray:
    """Input map for goal-conditioned nets.  When state and goal share a
    feature space the relative offset s - g is appended, so distance-to-goal
    structure is linearly available instead of having to be rediscovered
    from the raw concatenation."""
    if s_feat.shape[1] == g_feat.shape[1]:
        return np.hstack([s_feat, g_feat, s_feat - g_feat])
    return np.hstack([s_feat, g_feat])


def pair_dim(state_dim: int, goal_dim: int) -> int:
    extra = state_dim if state_dim == goal_dim else 0
    return state_dim + goal_dim + extra


@dataclass
class TrainResult:
    params: MlpParams
    losses: np.ndarray
    unstable: bool = False
    skipped_batches: int = 0


def train_discriminator(bank: TransitionBank, config: TrainConfig) -> TrainResult:
    """Logistic classifier c(s, g): goal-satisfying pairs (feature of a state
    achieving g, paired with g) labeled 1, dataset pairs (s, commanded g)
    labeled 0; squared-gradient penalty at dataset points."""
    rng = np.random.default_rng(config.seed)
    hidden = config.disc_hidden or config.hidden
    params = init_mlp([pair_dim(bank.state_dim, bank.goal_dim), hidden,
                       hidden, 1], rng)
    opt = Adam(params, config.lr_disc)
    losses = np.empty(config.disc_steps)
    half = config.batch // 2
    for step in range(config.disc_steps):
        neg_idx = bank.sample(rng, half, config.gamma, config.sample_discounted)
        x_neg = pair_input(bank.s_feat[neg_idx], bank.g_feat[neg_idx])
        # positives: states that exactly achieve a dataset goal
        pos_idx = bank.sample(rng, half, config.gamma, config.sample_discounted)
        g_pos = bank.ag_sn_feat[pos_idx]
        x_pos = pair_input(_state_achieving(bank, g_pos), g_pos)
        x = np.vstack([x_pos, x_neg])
        y = np.concatenate([np.ones(half), np.zeros(half)])
        o = mlp_forward(params, x)[:, 0]
        c = sigmoid(o)
        eps = 1e-12
        bce = -np.mean(y * np.log(c + eps) + (1 - y) * np.log(1 - c + eps))
        upstream = ((c - y) / len(y))[:, None]
        grads, _ = mlp_grad(params, x, upstream)
        pen, pen_grads = disc_penalty_grads(params, x_neg)
        for gp, pp in zip(grads.weights + grads.biases,
                          pen_grads.weights + pen_grads.biases):
            gp += config.grad_penalty * pp
        opt.step(params, grads)
        losses[step] = bce + config.grad_penalty * pen
    return TrainResult(params, losses)


def _state_achieving(bank: TransitionBank, g_feat: np.ndarray) -> np.ndarray:
    """A state feature whose achieved goal equals each given goal.

    For the continuous task states and goals share coordinates; for one-hot
    tabular banks the goal one-hot maps back to a canonical preimage state."""
    if bank.s_feat.shape[1] == g_feat.shape[1]:
        return g_feat
    # tabular with phi != identity: pick, per goal column, the first dataset
    # state observed to achieve it
    out = np.zeros((len(g_feat), bank.state_dim))
    for k, gf in enumerate(g_feat):
        hits = np.flatnonzero((bank.ag_s_feat == gf).all(axis=1))
        if hits.size == 0:
            hits = np.flatnonzero((bank.ag_sn_feat == gf).all(axis=1))
            out[k] = bank.sn_feat[hits[0]]
        else:
            out[k] = bank.s_feat[hits[0]]
    return out


def reward_from_disc(disc: MlpParams, s_feat: np.ndarray,
                     g_feat: np.ndarray) -> np.ndarray:
    """R = -log(1/c - 1) with c clamped to [1e-6, 1 - 1e-6]."""
    c = sigmoid(mlp_forward(disc, pair_input(s_feat, g_feat))[:, 0])
    c = np.clip(c, 1e-6, 1.0 - 1e-6)
    return -np.log(1.0 / c - 1.0)


def binary_reward_fn(bank: TransitionBank):
    def fn(idx, g_feat):
        return bank.reward(idx, g_feat)
    return fn


def disc_reward_fn(bank: TransitionBank, disc: MlpParams):
    def fn(idx, g_feat):
        return reward_from_disc(disc, bank.s_feat[idx], g_feat)
    return fn


# ---------------------------------------------------------------------------
# dual value


def train_value(bank: TransitionBank, reward_fn, div: FDivergence,
                config: TrainConfig) -> TrainResult:
    """SGD on the empirical dual loss
    (1-gamma) mean V(s0, g0) + mean f*(R + gamma V(s') - V(s)).

    The advantage uses the single observed next state.  Divergent training
    (non-finite loss or growth past 10x the initial loss) is flagged rather
    than raised: the exponential conjugate is expected to blow up.

    With value_avg_tail > 0 the returned parameters are the running average
    of the iterates over the last value_avg_tail fraction of steps, which
    suppresses the stationary SGD noise in the fitted advantages.

    With center_reward the loss is optimized against r - r0 for a constant
    probe-batch mean r0, and r0 / (1 - gamma) is added back to the output
    bias afterwards.  The advantage r + gamma V(s') - V(s) is invariant to
    this shift, but the net no longer has to spend capacity representing a
    large constant baseline (the discriminator reward saturates near
    log(1e-6) off-goal, putting V around r0 / (1 - gamma))."""
    rng = np.random.default_rng(config.seed + 1)
    params = init_mlp([pair_dim(bank.state_dim, bank.goal_dim), config.hidden,
                       config.hidden, 1], rng)
    opt = Adam(params, config.lr_value)
    losses = np.full(config.value_steps, np.nan)
    unstable = False
    gamma = config.gamma
    r_off = 0.0
    if config.center_reward:
        probe = bank.sample(rng, min(4096, bank.n), gamma,
                            config.sample_discounted)
        r_off = float(np.mean(reward_fn(probe, bank.g_feat[probe])))
    averager = ParamAverager(config.value_steps
                             - int(round(config.value_avg_tail
                                         * config.value_steps)))
    for step in range(config.value_steps):
        idx = bank.sample(rng, config.batch, gamma, config.sample_discounted)
        g = bank.g_feat[idx]
        r = reward_fn(idx, g) - r_off
        x_s = pair_input(bank.s_feat[idx], g)
        x_sn = pair_input(bank.sn_feat[idx], g)
        s0, g0 = bank.initial_batch(rng, config.batch)
        x_0 = pair_input(s0, g0)
        x = np.vstack([x_0, x_s, x_sn])
        v = mlp_forward(params, x)[:, 0]
        b = config.batch
        v0, vs, vsn = v[:b], v[b:2 * b], v[2 * b:]
        adv = r + gamma * vsn - vs
        fstar = f_star_value(div, adv)
        loss = (1.0 - gamma) * v0.mean() + fstar.mean()
        losses[step] = loss
        if not np.isfinite(loss) or (step > 0 and
                                     abs(loss) > 10.0 * max(abs(losses[0]), 1e-8)):
            unstable = True
            break
        if div.kind == CHI2:
            dfd = adv + 1.0
        else:
            dfd = np.exp(adv - 1.0)
        upstream = np.concatenate([
            np.full(b, (1.0 - gamma) / b),
            -dfd / b,
            gamma * dfd / b,
        ])[:, None]
        grads, _ = mlp_grad(params, x, upstream)
        opt.step(params, grads)
        if config.value_avg_tail > 0:
            averager.update(step, params)
    if not unstable:
        params = averager.result(params)
    params.biases[-1] += r_off / (1.0 - gamma)
    return TrainResult(params, losses, unstable=unstable)


def value_of(params: MlpParams, s_feat, g_feat) -> np.ndarray:
    return mlp_forward(params, pair_input(s_feat, g_feat))[:, 0]


# ---------------------------------------------------------------------------
# policies


@dataclass
class GoalPolicy:
    params: MlpParams
    kind: str  # DISCRETE or GAUSSIAN
    max_action: float = 0.0
    sigma: float = 0.1

    def act(self, s_feat: np.ndarray, g_feat: np.ndarray,
            rng: np.random.Generator | None = None):
        """Greedy action (mode) unless an rng is given."""
        out = mlp_forward(self.params, pair_input(np.atleast_2d(s_feat),
                                                  np.atleast_2d(g_feat)))
        if self.kind == DISCRETE:
            if rng is None:
                return int(np.argmax(out[0]))
            z = out[0] - out[0].max()
            p = np.exp(z)
            return int(rng.choice(len(p), p=p / p.sum()))
        mean = self.max_action * np.tanh(out[0])
        if rng is None:
            return mean
        return mean + rng.normal(0.0, self.sigma, mean.shape)

    def action_probs(self, s_feat: np.ndarray, g_feat: np.ndarray) -> np.ndarray:
        if self.kind != DISCRETE:
            raise ValueError("action_probs is for discrete policies")
        out = mlp_forward(self.params, pair_input(s_feat, g_feat))
        z = out - out.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)


def _policy_net(bank: TransitionBank, config: TrainConfig,
                rng: np.random.Generator) -> MlpParams:
    out_dim = bank.n_actions if bank.action_kind == DISCRETE else bank.a.shape[1]
    return init_mlp([pair_dim(bank.state_dim, bank.goal_dim), config.hidden,
                     config.hidden, out_dim], rng)


def _policy_averager(config: TrainConfig) -> ParamAverager:
    return ParamAverager(config.policy_steps
                         - int(round(config.policy_avg_tail
                                     * config.policy_steps)))


def _loglik_upstream(bank: TransitionBank, params: MlpParams, x, idx, w,
                     max_action, sigma):
    """Per-sample weighted negative log-likelihood and its upstream gradient
    at the network output."""
    out = mlp_forward(params, x)
    n = len(idx)
    if bank.action_kind == DISCRETE:
        z = out - out.max(axis=1, keepdims=True)
        e = np.exp(z)
        p = e / e.sum(axis=1, keepdims=True)
        onehot = np.zeros_like(p)
        onehot[np.arange(n), bank.a[idx]] = 1.0
        loss = -np.sum(w * np.log(p[np.arange(n), bank.a[idx]] + 1e-12)) / n
        upstream = (w[:, None] * (p - onehot)) / n
    else:
        th = np.tanh(out)
        mean = max_action * th
        diff = mean - bank.a[idx]
        loss = np.sum(w * (diff * diff).sum(axis=1)) / (2 * sigma**2 * n)
        upstream = (w[:, None] * diff * max_action * (1 - th * th)) / (sigma**2 * n)
    return loss, upstream


def train_policy_far(bank: TransitionBank, value: MlpParams, reward_fn,
                     div: FDivergence, config: TrainConfig) -> TrainResult:
    """Advantage-weighted regression on commanded goals only.

    Weights f*'(R + gamma V(s') - V(s)) clamped to valid ratios; the value
    network is read-only (asserted) and no relabeling happens (asserted)."""
    rng = np.random.default_rng(config.seed + 2)
    params = _policy_net(bank, config, rng)
    opt = Adam(params, config.lr_policy)
    averager = _policy_averager(config)
    losses = np.empty(config.policy_steps)
    skipped = 0
    v_fp = value.fingerprint()
    relabels_before = bank.relabel_calls
    gamma = config.gamma
    for step in range(config.policy_steps):
        idx = bank.sample(rng, config.batch, gamma, config.sample_discounted)
        g = bank.g_feat[idx]
        r = reward_fn(idx, g)
        adv = (r + gamma * value_of(value, bank.sn_feat[idx], g)
               - value_of(value, bank.s_feat[idx], g))
        w = weight(div, adv)
        if div.kind == KL:
            w = w / max(w.mean(), 1e-12)
        if w.sum() <= 0:
            skipped += 1
            losses[step] = 0.0
            continue
        x = pair_input(bank.s_feat[idx], g)
        loss, upstream = _loglik_upstream(bank, params, x, idx, w,
                                          bank.max_action, config.policy_sigma)
        grads, _ = mlp_grad(params, x, upstream)
        opt.step(params, grads)
        averager.update(step, params)
        losses[step] = loss
    assert value.fingerprint() == v_fp, "policy training mutated the value net"
    assert bank.relabel_calls == relabels_before, \
        "advantage-regression path consumed relabeled samples"
    return TrainResult(averager.result(params), losses, skipped_batches=skipped)


def train_gcsl(bank: TransitionBank, relabel: RelabelSpec,
               config: TrainConfig) -> TrainResult:
    """Goal-conditioned behavior cloning on (optionally) relabeled batches."""
    rng = np.random.default_rng(config.seed + 3)
    params = _policy_net(bank, config, rng)
    opt = Adam(params, config.lr_policy)
    averager = _policy_averager(config)
    losses = np.empty(config.policy_steps)
    for step in range(config.policy_steps):
        idx = bank.sample(rng, config.batch, config.gamma, False)
        if relabel.strategy == FUTURE_UNIFORM:
            g, _, _ = bank.relabel(idx, rng, relabel.her_ratio)
        else:
            g = bank.g_feat[idx]
        x = pair_input(bank.s_feat[idx], g)
        w = np.ones(len(idx))
        loss, upstream = _loglik_upstream(bank, params, x, idx, w,
                                          bank.max_action, config.policy_sigma)
        grads, _ = mlp_grad(params, x, upstream)
        opt.step(params, grads)
        averager.update(step, params)
        losses[step] = loss
    return TrainResult(averager.result(params), losses)


def train_wgcsl(bank: TransitionBank, relabel: RelabelSpec,
                config: TrainConfig) -> TrainResult:
    """Weighted GCSL: interleaved TD training of Q(s,a;g) and policy
    regression with weights gamma^lag * clip(exp(A), exp_clip), where
    A = r + gamma Q(s', pi(s')) - Q(s, a)."""
    rng = np.random.default_rng(config.seed + 4)
    params = _policy_net(bank, config, rng)
    discrete = bank.action_kind == DISCRETE
    q_in = (pair_dim(bank.state_dim, bank.goal_dim)
            + (0 if discrete else bank.a.shape[1]))
    q_out = bank.n_actions if discrete else 1
    q = init_mlp([q_in, config.hidden, config.hidden, q_out], rng)
    opt_pi = Adam(params, config.lr_policy)
    opt_q = Adam(q, config.lr_value)
    averager = _policy_averager(config)
    losses = np.empty(config.policy_steps)
    unstable = False
    gamma = config.gamma
    policy = GoalPolicy(params, bank.action_kind, bank.max_action,
                        config.policy_sigma)
    for step in range(config.policy_steps):
        idx = bank.sample(rng, config.batch, gamma, False)
        if relabel.strategy == FUTURE_UNIFORM:
            g, r, lag = bank.relabel(idx, rng, relabel.her_ratio)
        else:
            g = bank.g_feat[idx]
            r = bank.reward(idx, g)
            lag = np.zeros(len(idx), dtype=int)
        n = len(idx)
        if discrete:
            x_q = pair_input(bank.s_feat[idx], g)
            x_qn = pair_input(bank.sn_feat[idx], g)
            qs = mlp_forward(q, x_q)
            qn = mlp_forward(q, x_qn)
            pi_next = policy.action_probs(bank.sn_feat[idx], g)
            q_next = (pi_next * qn).sum(axis=1)
            q_sa = qs[np.arange(n), bank.a[idx]]
            target = r + gamma * q_next
            td = q_sa - target
            upstream_q = np.zeros_like(qs)
            upstream_q[np.arange(n), bank.a[idx]] = td / n
            grads_q, _ = mlp_grad(q, x_q, upstream_q)
        else:
            x_q = np.hstack([pair_input(bank.s_feat[idx], g), bank.a[idx]])
            a_next = bank.max_action * np.tanh(
                mlp_forward(params, pair_input(bank.sn_feat[idx], g)))
            x_qn = np.hstack([pair_input(bank.sn_feat[idx], g), a_next])
            q_sa = mlp_forward(q, x_q)[:, 0]
            q_next = mlp_forward(q, x_qn)[:, 0]
            target = r + gamma * q_next
            td = q_sa - target
            grads_q, _ = mlp_grad(q, x_q, (td / n)[:, None])
        q_loss = float(np.mean(td * td) / 2)
        if not np.isfinite(q_loss):
            unstable = True
            losses[step:] = np.nan
            break
        opt_q.step(q, grads_q)
        adv = target - q_sa
        w = gamma ** lag * np.minimum(np.exp(np.minimum(adv, 50.0)),
                                      config.exp_clip)
        x = pair_input(bank.s_feat[idx], g)
        loss, upstream = _loglik_upstream(bank, params, x, idx, w,
                                          bank.max_action, config.policy_sigma)
        grads, _ = mlp_grad(params, x, upstream)
        opt_pi.step(params, grads)
        averager.update(step, params)
        losses[step] = loss
    if not unstable:
        params = averager.result(params)
    return TrainResult(params, losses, unstable=unstable)


# ---------------------------------------------------------------------------
# full pipelines


GOFAR = "gofar"
GOFAR_HER = "gofar+her"
GOFAR_BINARY = "gofar-binary"
GOFAR_KL = "gofar-kl"
GCSL = "gcsl"
GCSL_NOHER = "gcsl-noher"
WGCSL = "wgcsl"
WGCSL_NOHER = "wgcsl-noher"
ALGOS = (GOFAR, GOFAR_HER, GOFAR_BINARY, GOFAR_KL,
         GCSL, GCSL_NOHER, WGCSL, WGCSL_NOHER)

HER_FULL = RelabelSpec(strategy=FUTURE_UNIFORM, her_ratio=1.0)
NO_RELABEL = RelabelSpec(strategy=NONE, her_ratio=0.0)


@dataclass
class TrainedAgent:
    policy: GoalPolicy
    value: MlpParams | None
    losses: dict
    unstable: bool


def _gofar_her_bank(bank: TransitionBank, config: TrainConfig) -> TransitionBank:
    """Rewrite commanded goals by hindsight relabeling once, up front, so the
    standard pipeline can run on the relabeled dataset (the +HER arm)."""
    rng = np.random.default_rng(config.seed + 9)
    idx = np.arange(bank.n)
    g, _, _ = bank.relabel(idx, rng, 1.0)
    clone = TransitionBank(
        s_feat=bank.s_feat, a=bank.a, sn_feat=bank.sn_feat, g_feat=g,
        ag_s_feat=bank.ag_s_feat, ag_sn_feat=bank.ag_sn_feat, t=bank.t,
        traj_lo=bank.traj_lo, traj_hi=bank.traj_hi, s0_feat=bank.s0_feat,
        g0_feat=bank.g0_feat, action_kind=bank.action_kind,
        goal_tol=bank.goal_tol, n_actions=bank.n_actions,
        max_action=bank.max_action)
    return clone


def train_agent(algo: str, bank: TransitionBank,
                config: TrainConfig) -> TrainedAgent:
    """Dispatch a full training run for one algorithm variant."""
    if algo not in ALGOS:
        raise ValueError(f"unknown algorithm {algo!r}")
    losses = {}
    if algo in (GOFAR, GOFAR_HER, GOFAR_BINARY, GOFAR_KL):
        work = _gofar_her_bank(bank, config) if algo == GOFAR_HER else bank
        div = FDivergence(KL if algo == GOFAR_KL else CHI2)
        if algo == GOFAR_KL:
            # the exponential conjugate is deliberately run on the raw
            # saturated rewards; centering would mask exactly the numerical
            # blow-up this arm exists to measure
            config = replace(config, center_reward=False)
        if algo == GOFAR_BINARY:
            reward_fn = binary_reward_fn(work)
        else:
            disc = train_discriminator(work, config)
            losses["disc"] = disc.losses
            reward_fn = disc_reward_fn(work, disc.params)
        val = train_value(work, reward_fn, div, config)
        losses["value"] = val.losses
        pol = train_policy_far(work, val.params, reward_fn, div, config)
        losses["policy"] = pol.losses
        policy = GoalPolicy(pol.params, bank.action_kind, bank.max_action,
                            config.policy_sigma)
        return TrainedAgent(policy, val.params, losses, val.unstable)
    relabel = HER_FULL if algo in (GCSL, WGCSL) else NO_RELABEL
    res = (train_gcsl if algo in (GCSL, GCSL_NOHER) else train_wgcsl)(
        bank, relabel, config)
    losses["policy"] = res.losses
    policy = GoalPolicy(res.params, bank.action_kind, bank.max_action,
                        config.policy_sigma)
    return TrainedAgent(policy, None, losses, res.unstable)
