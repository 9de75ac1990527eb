"""Exact goal-conditioned occupancy measures and identity/inequality checks.

solve_occupancy inverts the Bellman flow system directly (gamma < 1 makes
it nonsingular), giving machine-precision occupancies that serve as the
ground truth for everything downstream.  The remaining operations turn the
analytical statements about occupancy matching (the KL identity linking
return and state entropy, the offline lower bounds, and the marginal-KL
inequality) into numbers a test can assert on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fdiv import FDivergence, divergence
from .mdp import TabularGCMDP, TabularPolicy

DISCRIMINATOR = "discriminator"
BINARY = "binary"


@dataclass(frozen=True)
class OccupancyTensor:
    """d[s, a, g] >= 0, normalized to 1 over (s, a) for every goal."""

    d: np.ndarray  # (S, A, G)

    def __post_init__(self):
        self.d.setflags(write=False)

    def state_marginal(self) -> np.ndarray:
        """d(s; g) of shape (S, G)."""
        return self.d.sum(axis=1)

    def policy(self) -> np.ndarray:
        """Recover pi(a|s,g) = d(s,a;g)/d(s;g); uniform where d(s;g) = 0."""
        marg = self.state_marginal()[:, None, :]
        n_actions = self.d.shape[1]
        with np.errstate(invalid="ignore", divide="ignore"):
            pi = np.where(marg > 0, self.d / marg, 1.0 / n_actions)
        return np.transpose(pi, (0, 2, 1))  # (S, G, A)


def transition_under(mdp: TabularGCMDP, policy: TabularPolicy, g: int) -> np.ndarray:
    """State-to-state kernel P_pi[s, s'] for goal g."""
    # (S, A) x (S, A, S') -> (S, S')
    return np.einsum("sa,sat->st", policy.probs[:, g, :], mdp.transition)


def solve_occupancy(mdp: TabularGCMDP, policy: TabularPolicy) -> OccupancyTensor:
    """Exact discounted occupancy per goal via a direct linear solve.

    For each g the state marginal rho solves
    (I - gamma * P_pi^T) rho = (1 - gamma) * mu0, and
    d(s,a;g) = rho(s) * pi(a|s,g).
    """
    S, A, G = mdp.n_states, mdp.n_actions, mdp.n_goals
    d = np.zeros((S, A, G))
    eye = np.eye(S)
    for g in range(G):
        P = transition_under(mdp, policy, g)
        rho = np.linalg.solve(eye - mdp.gamma * P.T, (1.0 - mdp.gamma) * mdp.mu0)
        d[:, :, g] = rho[:, None] * policy.probs[:, g, :]
    return OccupancyTensor(d)


def occupancy_series(mdp: TabularGCMDP, policy: TabularPolicy,
                     n_terms: int = 200) -> OccupancyTensor:
    """Truncated-series oracle: (1-gamma) * sum_t gamma^t Pr(s_t, a_t).

    Independent of solve_occupancy; kept for tests.
    """
    S, A, G = mdp.n_states, mdp.n_actions, mdp.n_goals
    d = np.zeros((S, A, G))
    for g in range(G):
        P = transition_under(mdp, policy, g)
        rho_t = mdp.mu0.copy()
        acc = np.zeros(S)
        w = 1.0 - mdp.gamma
        for _ in range(n_terms):
            acc += w * rho_t
            rho_t = P.T @ rho_t
            w *= mdp.gamma
        d[:, :, g] = acc[:, None] * policy.probs[:, g, :]
    return OccupancyTensor(d)


def flow_residual(mdp: TabularGCMDP, occ: OccupancyTensor) -> float:
    """Max-abs residual of the Bellman flow constraint over (s, g)."""
    lhs = occ.state_marginal()  # (S, G)
    inflow = np.einsum("sat,sag->tg", mdp.transition, occ.d)  # (S', G)
    rhs = (1.0 - mdp.gamma) * mdp.mu0[:, None] + mdp.gamma * inflow
    return float(np.max(np.abs(lhs - rhs)))


def expected_return(mdp: TabularGCMDP, policy: TabularPolicy) -> float:
    """J(pi) = 1/(1-gamma) * E_{g, (s,a) ~ d^pi} [r(s; g)]."""
    occ = solve_occupancy(mdp, policy)
    per_goal = np.einsum("sg,sg->g", occ.state_marginal(), mdp.reward)
    return float(mdp.goal_dist @ per_goal / (1.0 - mdp.gamma))


def entropy(dist) -> float:
    """Shannon entropy with the 0 log 0 = 0 convention."""
    p = np.asarray(dist, dtype=float).ravel()
    pos = p > 0
    return float(-np.sum(p[pos] * np.log(p[pos])))


def _kl(p, q) -> float:
    """KL(p || q) with 0 log 0 = 0; q = 0 where p > 0 is a support error."""
    p = np.asarray(p, dtype=float).ravel()
    q = np.asarray(q, dtype=float).ravel()
    bad = (q <= 0) & (p > 0)
    if bad.any():
        raise ValueError(f"KL support violation at index {int(np.flatnonzero(bad)[0])}")
    pos = p > 0
    return float(np.sum(p[pos] * np.log(p[pos] / q[pos])))


def soft_target(mdp: TabularGCMDP) -> np.ndarray:
    """p(s; g) = e^{r(s;g)} / Z(g), the exponentiated-reward target."""
    e = np.exp(mdp.reward)  # (S, G)
    return e / e.sum(axis=0, keepdims=True)


def prop1_gap(mdp: TabularGCMDP, policy: TabularPolicy,
              r_table: np.ndarray | None = None) -> tuple:
    """Both sides of the occupancy-matching identity.

    lhs = -E_g KL(d^pi(s;g) || p(s;g)) + E_g log Z(g)
    rhs = (1-gamma) J(pi) + E_g H(d^pi(s;g))
    with p(s;g) = e^{r(s;g)} / Z(g).
    """
    r = mdp.reward if r_table is None else np.asarray(r_table, dtype=float)
    e = np.exp(r)
    z = e.sum(axis=0)  # (G,)
    p_sg = e / z
    occ = solve_occupancy(mdp, policy)
    marg = occ.state_marginal()  # (S, G)
    pg = mdp.goal_dist
    kl = sum(pg[g] * _kl(marg[:, g], p_sg[:, g]) for g in range(mdp.n_goals))
    lhs = -kl + float(pg @ np.log(z))
    j = float(pg @ np.einsum("sg,sg->g", marg, r)) / (1.0 - mdp.gamma)
    h = sum(pg[g] * entropy(marg[:, g]) for g in range(mdp.n_goals))
    rhs = (1.0 - mdp.gamma) * j + h
    return lhs, rhs


def lower_bound_slack(mdp: TabularGCMDP, policy: TabularPolicy,
                      d_offline: OccupancyTensor, div: FDivergence,
                      variant: str = DISCRIMINATOR) -> float:
    """LHS - RHS of the offline lower bound on -KL(d^pi(s;g) || p(s;g)).

    variant=DISCRIMINATOR uses reward log(p(s;g)/d^O(s;g)); variant=BINARY
    drops the -log d^O term, giving the looser discriminator-free bound.
    Requires d^O(s;g) > 0 wherever p(s;g) > 0 (coverage assumption).
    """
    if variant not in (DISCRIMINATOR, BINARY):
        raise ValueError(f"unknown variant {variant!r}")
    p_sg = soft_target(mdp)  # (S, G), strictly positive
    occ = solve_occupancy(mdp, policy)
    marg = occ.state_marginal()
    off_marg = d_offline.state_marginal()
    pg = mdp.goal_dist
    bad = (off_marg <= 0) & (p_sg > 0)
    if bad.any():
        s, g = map(int, np.argwhere(bad)[0])
        raise ValueError(f"coverage violation: d^O(s;g) = 0 at (s={s}, g={g}) "
                         "where p(s;g) > 0")

    lhs = -sum(pg[g] * _kl(marg[:, g], p_sg[:, g]) for g in range(mdp.n_goals))
    # E_{(s,g) ~ d^pi} [log p(s;g)] and optionally [- log d^O(s;g)]
    log_term = np.log(p_sg)
    if variant == DISCRIMINATOR:
        log_term = log_term - np.log(off_marg)
    reward_term = float(np.einsum("g,sg,sg->", pg, marg, log_term))
    df = sum(pg[g] * divergence(occ.d[:, :, g], d_offline.d[:, :, g], div)
             for g in range(mdp.n_goals))
    rhs = reward_term - df
    return lhs - rhs


def lemma_b1_check(d1: OccupancyTensor, d2: OccupancyTensor,
                   goal_dist: np.ndarray | None = None) -> tuple:
    """(state KL, state-action KL) between two occupancies; the former
    never exceeds the latter for occupancies of the same MDP."""
    G = d1.d.shape[2]
    pg = np.full(G, 1.0 / G) if goal_dist is None else np.asarray(goal_dist)
    m1, m2 = d1.state_marginal(), d2.state_marginal()
    state_kl = sum(pg[g] * _kl(m1[:, g], m2[:, g]) for g in range(G))
    sa_kl = sum(pg[g] * _kl(d1.d[:, :, g], d2.d[:, :, g]) for g in range(G))
    return state_kl, sa_kl
