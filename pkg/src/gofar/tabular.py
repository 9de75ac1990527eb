"""Exact GoFAR for finite MDPs.

The f-divergence regularized occupancy-matching problem is solved two ways:

* solve_dual_chi2: the closed-form minimizer of the chi-squared dual, a
  weighted least-squares problem over the value table V(s;g) on the
  goal-augmented state space.  The primal optimum is then recovered as
  d*(s,a;g) = d^O(s,a;g) * max(0, R + gamma*T V* - V* + 1).
* primal_oracle: a direct convex solve of the primal over the Bellman flow
  polytope, used as an independent check of strong duality.

Rows of the augmented system are indexed (s, g, a) -> (s*G + g)*A + a and
columns (s, g) -> s*G + g.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import fdiv
from .dataset import OfflineDataset, transition_arrays
from .mdp import TabularGCMDP, TabularPolicy
from .occupancy import OccupancyTensor, soft_target, solve_occupancy, expected_return

log = logging.getLogger(__name__)

BINARY = "binary"
LOG_RATIO = "logratio"

RIDGE = 1e-8
CHI2 = fdiv.by_name(fdiv.CHI2)


@dataclass(frozen=True)
class ValueTable:
    v: np.ndarray  # (S, G)

    def __post_init__(self):
        self.v.setflags(write=False)
        if not np.isfinite(self.v).all():
            raise ValueError("value table has non-finite entries")


@dataclass(frozen=True)
class AugmentedSystem:
    """Vectorized dual problem over the goal-augmented state space."""

    n_states: int
    n_actions: int
    n_goals: int
    T_op: np.ndarray     # (S*G*A, S*G) expected-next-value operator
    B_op: np.ndarray     # (S*G*A, S*G) broadcast of V(s;g) to rows
    D_diag: np.ndarray   # (S*G*A,) joint density p(g) d^O(s,a;g)
    R_vec: np.ndarray    # (S*G*A,) reward broadcast to rows
    mu0_vec: np.ndarray  # (S*G,) mu0(s) p(g)

    def col(self, s, g):
        return s * self.n_goals + g


def build_system(mdp: TabularGCMDP, d_offline: OccupancyTensor,
                 reward_choice: str = BINARY,
                 mu0_sg: np.ndarray | None = None) -> AugmentedSystem:
    """Assemble the augmented-space operators from an MDP and offline
    occupancy.

    reward_choice BINARY uses the task reward r(s;g); LOG_RATIO uses
    log(p(s;g) / d^O(s;g)) with the exponentiated-reward target p and
    requires full per-goal state coverage of d^O.  mu0_sg optionally
    overrides the initial joint density over (s, g) (used when comparing
    against training on empirical start/goal samples).
    """
    S, A, G = mdp.n_states, mdp.n_actions, mdp.n_goals
    n_cols = S * G
    n_rows = n_cols * A

    T_op = np.zeros((n_rows, n_cols))
    B_op = np.zeros((n_rows, n_cols))
    rows = np.arange(n_rows)
    s_of = rows // (G * A)
    g_of = (rows // A) % G
    a_of = rows % A
    B_op[rows, s_of * G + g_of] = 1.0
    for sp in range(S):
        T_op[rows, sp * G + g_of] += mdp.transition[s_of, a_of, sp]

    if reward_choice == BINARY:
        r_sg = mdp.reward
    elif reward_choice == LOG_RATIO:
        p_sg = soft_target(mdp)
        marg = d_offline.state_marginal()
        bad = (marg <= 0) & (p_sg > 0)
        if bad.any():
            s, g = map(int, np.argwhere(bad)[0])
            raise ValueError(f"coverage error: d^O(s;g) = 0 at (s={s}, g={g}) "
                             "where p(s;g) > 0; log-ratio reward undefined")
        r_sg = np.log(p_sg / marg)
    else:
        raise ValueError(f"unknown reward choice {reward_choice!r}")
    R_vec = r_sg[s_of, g_of]

    joint = d_offline.d * mdp.goal_dist[None, None, :]  # (S, A, G)
    D_diag = np.transpose(joint, (0, 2, 1)).reshape(n_rows)

    if mu0_sg is None:
        mu0_vec = (mdp.mu0[:, None] * mdp.goal_dist[None, :]).reshape(n_cols)
    else:
        mu0_vec = np.asarray(mu0_sg, dtype=float).reshape(n_cols)
    return AugmentedSystem(n_states=S, n_actions=A, n_goals=G, T_op=T_op,
                           B_op=B_op, D_diag=D_diag, R_vec=R_vec,
                           mu0_vec=mu0_vec)


def _advantage(sys: AugmentedSystem, gamma: float, v_flat: np.ndarray) -> np.ndarray:
    return sys.R_vec + (gamma * sys.T_op - sys.B_op) @ v_flat


def solve_dual_chi2(sys: AugmentedSystem, gamma: float,
                    ridge: float = RIDGE) -> ValueTable:
    """Closed-form minimizer of the chi-squared dual objective.

    V* solves (gamma T - B)^T D (gamma T - B) V =
              (gamma - 1) mu0 + (B - gamma T)^T D (1 + R).
    The solve is restricted to columns that are touched by rows with
    positive d^O mass (plus ridge regularization); untouched columns carry
    no curvature and their V is pinned to 0.
    """
    A_m = gamma * sys.T_op - sys.B_op
    Dw = sys.D_diag
    supported_rows = Dw > 0
    active = (np.abs(A_m[supported_rows]).sum(axis=0) > 0)
    if not active.any():
        raise ValueError("deficient support: no column receives any d^O mass")
    A_act = A_m[np.ix_(supported_rows, active)]
    d_act = Dw[supported_rows]
    gram = A_act.T @ (d_act[:, None] * A_act) + ridge * np.eye(int(active.sum()))
    rhs = ((gamma - 1.0) * sys.mu0_vec[active]
           - A_act.T @ (d_act * (1.0 + sys.R_vec[supported_rows])))
    try:
        v_act = np.linalg.solve(gram, rhs)
    except np.linalg.LinAlgError as e:
        raise ValueError("deficient support: dual system singular "
                         "after ridge regularization") from e
    v_flat = np.zeros(sys.n_states * sys.n_goals)
    v_flat[active] = v_act
    return ValueTable(v_flat.reshape(sys.n_states, sys.n_goals))


def dual_value(sys: AugmentedSystem, gamma: float, v: ValueTable,
               exact_conjugate: bool = False) -> float:
    """Dual objective at V.

    With exact_conjugate=False this is the quadratic convention
    (1-gamma) mu0^T V + 1/2 E_dO[(adv+1)^2]; with True it uses the
    conjugate restricted to nonnegative ratios, max(0, adv+1)^2/2 - 1/2,
    whose minimum equals the primal optimum (strong duality).
    """
    v_flat = v.v.reshape(-1)
    adv = _advantage(sys, gamma, v_flat)
    head = (1.0 - gamma) * float(sys.mu0_vec @ v_flat)
    if exact_conjugate:
        body = float(sys.D_diag @ (0.5 * np.maximum(0.0, adv + 1.0) ** 2 - 0.5))
    else:
        body = float(sys.D_diag @ (0.5 * (adv + 1.0) ** 2))
    return head + body


def dual_gradient(sys: AugmentedSystem, gamma: float, v_flat: np.ndarray) -> np.ndarray:
    """Gradient of the quadratic dual objective; used by the descent oracle."""
    A_m = gamma * sys.T_op - sys.B_op
    adv = _advantage(sys, gamma, v_flat)
    return (1.0 - gamma) * sys.mu0_vec + A_m.T @ (sys.D_diag * (adv + 1.0))


def recover_dstar(sys: AugmentedSystem, v_star: ValueTable,
                  gamma: float) -> OccupancyTensor:
    """d*(s,a;g) = d^O(s,a;g) max(0, R + gamma T V* - V* + 1), renormalized
    per goal.  Goals whose entire d* mass vanishes are reported and left
    all-zero."""
    adv = _advantage(sys, gamma, v_star.v.reshape(-1))
    w = np.maximum(0.0, adv + 1.0)
    d_rows = sys.D_diag * w
    S, A, G = sys.n_states, sys.n_actions, sys.n_goals
    d = np.transpose(d_rows.reshape(S, G, A), (0, 2, 1))  # (S, A, G)
    mass = d.sum(axis=(0, 1))
    dead = np.flatnonzero(mass <= 0)
    if dead.size:
        log.warning("goals unreachable under d^O support: %s", dead.tolist())
    live = mass > 0
    d[:, :, live] /= mass[None, None, live]
    return OccupancyTensor(d)


def extract_policy(d_star: OccupancyTensor) -> TabularPolicy:
    """pi(a|s,g) proportional to d*(s,a;g); uniform on zero-mass states."""
    d = d_star.d  # (S, A, G)
    tot = d.sum(axis=1, keepdims=True)
    n_actions = d.shape[1]
    with np.errstate(invalid="ignore", divide="ignore"):
        pi = np.where(tot > 0, d / tot, 1.0 / n_actions)
    return TabularPolicy(np.transpose(pi, (0, 2, 1)))


def far_policy(sys: AugmentedSystem, v_star: ValueTable, gamma: float,
               d_offline: OccupancyTensor) -> TabularPolicy:
    """Tabular f-advantage regression: the closed-form maximizer of the
    weighted log-likelihood, pi(a|s,g) proportional to d^O(s,a;g) w(s,a,g).

    Computed without going through recover_dstar's per-goal renormalization;
    the equivalence of the two routes is the optimal goal-weighting
    property."""
    adv = _advantage(sys, gamma, v_star.v.reshape(-1))
    S, A, G = sys.n_states, sys.n_actions, sys.n_goals
    w = np.transpose(np.maximum(0.0, adv + 1.0).reshape(S, G, A), (0, 2, 1))
    scores = d_offline.d * w  # (S, A, G)
    tot = scores.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        pi = np.where(tot > 0, scores / tot, 1.0 / A)
    return TabularPolicy(np.transpose(pi, (0, 2, 1)))


def primal_oracle(mdp: TabularGCMDP, d_offline: OccupancyTensor,
                  reward_choice: str = BINARY,
                  gamma: float | None = None) -> tuple:
    """Solve the regularized occupancy problem directly on the flow polytope.

    Per goal: maximize sum_sa d R(s) - 1/2 sum_sa (d - d^O)^2 / d^O subject
    to the Bellman flow constraint, d >= 0, and d = 0 off the d^O support.
    Goals are independent; the overall objective weights them by p(g).
    Returns (OccupancyTensor, objective value).
    """
    import cvxpy as cp

    if gamma is None:
        gamma = mdp.gamma
    S, A, G = mdp.n_states, mdp.n_actions, mdp.n_goals
    sys = build_system(mdp, d_offline, reward_choice)
    r_sg = sys.R_vec.reshape(S, G, A)[:, :, 0]  # (S, G); R constant in a

    d_opt = np.zeros((S, A, G))
    total = 0.0
    for g in range(G):
        dO = d_offline.d[:, :, g]
        if dO.sum() <= 0:
            continue
        d = cp.Variable((S, A))
        sup = dO > 0
        constraints = [d >= 0]
        if (~sup).any():
            constraints.append(d[~sup] == 0)
        # flow: sum_a d(s,a) = (1-gamma) mu0(s) + gamma sum_{s~,a~} T d
        inflow = cp.vstack([
            cp.sum(cp.multiply(mdp.transition[:, :, sp], d)) for sp in range(S)
        ])
        constraints.append(
            cp.sum(d, axis=1) == (1.0 - gamma) * mdp.mu0 + gamma * cp.vec(inflow, order="C")
        )
        reward_term = cp.sum(cp.multiply(r_sg[:, g][:, None] * np.ones((1, A)), d))
        dev = d[sup] - dO[sup]
        penalty = 0.5 * cp.sum(cp.multiply(cp.square(dev), 1.0 / dO[sup]))
        prob = cp.Problem(cp.Maximize(reward_term - penalty), constraints)
        prob.solve(solver=cp.CLARABEL)
        if prob.status not in ("optimal", "optimal_inaccurate"):
            raise RuntimeError(f"primal oracle failed for goal {g}: {prob.status}")
        d_opt[:, :, g] = np.maximum(0.0, d.value)
        total += mdp.goal_dist[g] * float(prob.value)
    return OccupancyTensor(d_opt), total


def total_variation(d1: OccupancyTensor, d2: OccupancyTensor,
                    goal_dist: np.ndarray | None = None) -> float:
    """Goal-averaged total variation distance between occupancy tensors."""
    G = d1.d.shape[2]
    pg = np.full(G, 1.0 / G) if goal_dist is None else np.asarray(goal_dist)
    per_goal = 0.5 * np.abs(d1.d - d2.d).sum(axis=(0, 1))
    return float(pg @ per_goal)


def goal_posterior(dataset: OfflineDataset, mdp: TabularGCMDP) -> np.ndarray:
    """Empirical p(g|s,a) from commanded goals; NaN rows where (s,a) unseen."""
    s, a, _, _, g, _, _ = transition_arrays(dataset)
    counts = np.zeros((mdp.n_states, mdp.n_actions, mdp.n_goals))
    np.add.at(counts, (s, a, g), 1.0)
    tot = counts.sum(axis=2, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(tot > 0, counts / tot, np.nan)


def optimal_goal_weights(sys: AugmentedSystem, v_star: ValueTable, gamma: float,
                         dataset: OfflineDataset, mdp: TabularGCMDP) -> np.ndarray:
    """Optimal goal-weighting distribution p~(g|s,a) proportional to
    p(g|s,a) f*'(advantage); NaN for (s,a) unseen in the dataset."""
    post = goal_posterior(dataset, mdp)  # (S, A, G)
    adv = _advantage(sys, gamma, v_star.v.reshape(-1))
    S, A, G = sys.n_states, sys.n_actions, sys.n_goals
    w = np.transpose(np.maximum(0.0, adv + 1.0).reshape(S, G, A), (0, 2, 1))
    scores = post * w
    tot = scores.sum(axis=2, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(tot > 0, scores / tot, np.nan)


def her_goal_distribution(dataset: OfflineDataset, mdp: TabularGCMDP) -> np.ndarray:
    """Empirical hindsight distribution p_HER(g|s,a): uniform over strictly
    future achieved goals, averaged over dataset visits of (s,a)."""
    counts = np.zeros((mdp.n_states, mdp.n_actions, mdp.n_goals))
    visits = np.zeros((mdp.n_states, mdp.n_actions))
    for traj in dataset.trajectories:
        achieved = [int(mdp.phi[tr.s_next]) for tr in traj.transitions]
        for i, tr in enumerate(traj.transitions):
            future = achieved[i:]
            share = 1.0 / len(future)
            for gf in future:
                counts[tr.s, tr.a, gf] += share
            visits[tr.s, tr.a] += 1.0
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(visits[:, :, None] > 0,
                        counts / visits[:, :, None], np.nan)


def her_gap(sys: AugmentedSystem, v_star: ValueTable, gamma: float,
            dataset: OfflineDataset, mdp: TabularGCMDP) -> tuple:
    """Visit-weighted average KL(p_HER(g|s,a) || p~(g|s,a)).

    Restricted to the common support of the two distributions; returns
    (gap, excluded p_HER mass)."""
    p_her = her_goal_distribution(dataset, mdp)
    p_opt = optimal_goal_weights(sys, v_star, gamma, dataset, mdp)
    s, a, _, _, _, _, _ = transition_arrays(dataset)
    visits = np.zeros((mdp.n_states, mdp.n_actions))
    np.add.at(visits, (s, a), 1.0)
    weights = visits / visits.sum()

    gap = 0.0
    excluded = 0.0
    for si, ai in zip(*np.nonzero(visits)):
        ph = p_her[si, ai]
        po = p_opt[si, ai]
        if np.isnan(po).any():
            continue
        common = (ph > 0) & (po > 0)
        excluded += weights[si, ai] * float(ph[~common].sum())
        if not common.any():
            continue
        ph_c = ph[common] / ph[common].sum()
        po_c = po[common] / po[common].sum()
        gap += weights[si, ai] * float(np.sum(ph_c * np.log(ph_c / po_c)))
    return gap, excluded


def surrogate_mdp(dataset: OfflineDataset, base: TabularGCMDP) -> TabularGCMDP:
    """Maximum-likelihood transition estimate from the dataset; unseen (s,a)
    rows are imputed uniform 1/S."""
    S, A = base.n_states, base.n_actions
    counts = np.zeros((S, A, S))
    s, a, _, s_next, _, _, _ = transition_arrays(dataset)
    np.add.at(counts, (s, a, s_next), 1.0)
    n_sa = counts.sum(axis=2, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        t_hat = np.where(n_sa > 0, counts / n_sa, 1.0 / S)
    return TabularGCMDP(
        n_states=S, n_actions=A, n_goals=base.n_goals, transition=t_hat,
        mu0=base.mu0, goal_dist=base.goal_dist, phi=base.phi,
        reward=base.reward, gamma=base.gamma,
        meta={**base.meta, "surrogate": True},
    )


def gofar_tabular_pipeline(mdp: TabularGCMDP, d_offline: OccupancyTensor,
                           reward_choice: str = BINARY,
                           transition_mdp: TabularGCMDP | None = None) -> TabularPolicy:
    """Full exact pipeline: build system, closed-form dual, primal recovery,
    policy extraction.  transition_mdp optionally supplies a surrogate
    dynamics model (MLE from data) while rewards/goals come from mdp."""
    model = mdp if transition_mdp is None else transition_mdp
    sys = build_system(model, d_offline, reward_choice)
    v_star = solve_dual_chi2(sys, model.gamma)
    d_star = recover_dstar(sys, v_star, model.gamma)
    return extract_policy(d_star)


def suboptimality_trend(mdp: TabularGCMDP, behavior: TabularPolicy,
                        n_grid: list, seeds: list, horizon: int = 50) -> list:
    """Mean return gap of the empirical pipeline vs its infinite-data fixed
    point, per dataset size N.  Returns [(N, mean_gap), ...]."""
    from .dataset import collect, empirical_occupancy

    d_exact = solve_occupancy(mdp, behavior)
    pi_star = gofar_tabular_pipeline(mdp, d_exact, BINARY)
    j_star = expected_return(mdp, pi_star)

    out = []
    for n in n_grid:
        gaps = []
        for seed in seeds:
            ds = collect(mdp, behavior, n_traj=n, horizon=horizon,
                         seed=(seed * 100003 + n) % (2**32))
            d_emp = empirical_occupancy(ds, mdp)
            pi_hat = gofar_tabular_pipeline(mdp, d_emp, BINARY,
                                            transition_mdp=surrogate_mdp(ds, mdp))
            gaps.append(j_star - expected_return(mdp, pi_hat))
        out.append((n, float(np.mean(gaps))))
    return out
