"""Finite goal-conditioned MDPs and gridworld constructors.

States, actions and goals are integer indices.  The reward convention is
sparse and binary: r(s; g) = 1 iff phi(s) = g, where phi projects states
onto the goal space.  All containers are immutable numpy arrays; an MDP is
safe to share across concurrent runs.
"""

from __future__ import annotations

import hashlib
import json
from collections import deque
from dataclasses import dataclass, field

import numpy as np

# Action order: up, down, left, right, stay.
GRID_ACTIONS = [(-1, 0), (1, 0), (0, -1), (0, 1), (0, 0)]
N_GRID_ACTIONS = len(GRID_ACTIONS)


@dataclass(frozen=True)
class TabularGCMDP:
    """Goal-conditioned tabular MDP.

    transition[s, a, s'] gives next-state probabilities, mu0 the initial
    state distribution, goal_dist the commanded-goal distribution p(g),
    phi[s] the goal index achieved at s, reward[s, g] the binary reward.
    """

    n_states: int
    n_actions: int
    n_goals: int
    transition: np.ndarray  # (S, A, S)
    mu0: np.ndarray         # (S,)
    goal_dist: np.ndarray   # (G,)
    phi: np.ndarray         # (S,) int
    reward: np.ndarray      # (S, G)
    gamma: float
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        for name in ("transition", "mu0", "goal_dist", "phi", "reward"):
            getattr(self, name).setflags(write=False)
        if not (0.0 < self.gamma < 1.0):
            raise ValueError(f"gamma must lie strictly inside (0,1), got {self.gamma}")

    def fingerprint(self) -> str:
        """Stable hash of the MDP contents, used to tag datasets."""
        return hashlib.sha256(to_json(self).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class TabularPolicy:
    """Goal-conditioned policy pi[s, g, a]."""

    probs: np.ndarray  # (S, G, A)

    def __post_init__(self):
        self.probs.setflags(write=False)

    @staticmethod
    def uniform(mdp: TabularGCMDP) -> "TabularPolicy":
        p = np.full((mdp.n_states, mdp.n_goals, mdp.n_actions), 1.0 / mdp.n_actions)
        return TabularPolicy(p)

    @staticmethod
    def random(mdp: TabularGCMDP, rng: np.random.Generator) -> "TabularPolicy":
        p = rng.dirichlet(np.ones(mdp.n_actions), size=(mdp.n_states, mdp.n_goals))
        return TabularPolicy(p)

    def mixture(self, other: "TabularPolicy", w_other: float) -> "TabularPolicy":
        return TabularPolicy((1.0 - w_other) * self.probs + w_other * other.probs)


@dataclass(frozen=True)
class GridworldSpec:
    width: int
    height: int
    walls: frozenset = frozenset()      # set of (row, col)
    slip_prob: float = 0.0
    goal_block: int = 1                 # phi coarseness: cells per goal block side
    gamma: float = 0.9
    horizon: int = 50

    def __post_init__(self):
        if not (0.0 <= self.slip_prob < 1.0):
            raise ValueError("slip_prob must lie in [0,1)")
        if self.goal_block < 1:
            raise ValueError("goal_block must be >= 1")
        for (r, c) in self.walls:
            if not (0 <= r < self.height and 0 <= c < self.width):
                raise ValueError(f"wall {(r, c)} outside the grid")


def build_gridworld(spec: GridworldSpec) -> TabularGCMDP:
    """Build a 5-action (4 moves + stay) gridworld.

    Moving into a wall or off the grid keeps the agent in place.  With
    probability slip_prob the executed action is replaced by a uniformly
    random action.  phi maps each cell to its goal_block-sized block; with
    goal_block=1 every free cell is its own goal.
    """
    free = [(r, c) for r in range(spec.height) for c in range(spec.width)
            if (r, c) not in spec.walls]
    if not free:
        raise ValueError("gridworld has no free cells")
    cell_to_state = {cell: i for i, cell in enumerate(free)}
    n_states = len(free)

    # phi: block-coarsened cell index over goal blocks that contain free cells
    block_of = {}
    for (r, c) in free:
        block_of[(r, c)] = (r // spec.goal_block, c // spec.goal_block)
    blocks = sorted(set(block_of.values()))
    block_to_goal = {b: i for i, b in enumerate(blocks)}
    n_goals = len(blocks)
    phi = np.array([block_to_goal[block_of[cell]] for cell in free], dtype=np.int64)

    def step_cell(cell, a):
        dr, dc = GRID_ACTIONS[a]
        nxt = (cell[0] + dr, cell[1] + dc)
        if nxt in cell_to_state:
            return nxt
        return cell

    det = np.zeros((n_states, N_GRID_ACTIONS, n_states))
    for cell, s in cell_to_state.items():
        for a in range(N_GRID_ACTIONS):
            det[s, a, cell_to_state[step_cell(cell, a)]] = 1.0
    slip = spec.slip_prob
    transition = (1.0 - slip) * det + slip * det.mean(axis=1, keepdims=True)

    # every goal block must be reachable from some start (detected by BFS
    # over the deterministic move graph); otherwise the task is degenerate
    adj = {s: set(np.flatnonzero(det[s].sum(axis=0))) for s in range(n_states)}
    reachable_goals = set()
    frontier = deque([0])
    seen = {0}
    while frontier:
        s = frontier.popleft()
        reachable_goals.add(int(phi[s]))
        for s2 in adj[s]:
            if s2 not in seen:
                seen.add(s2)
                frontier.append(int(s2))
    missing = set(range(n_goals)) - reachable_goals
    if missing:
        raise ValueError(f"goal blocks unreachable from every start: {sorted(missing)}")

    mu0 = np.full(n_states, 1.0 / n_states)
    goal_dist = np.full(n_goals, 1.0 / n_goals)
    reward = (phi[:, None] == np.arange(n_goals)[None, :]).astype(float)
    return TabularGCMDP(
        n_states=n_states, n_actions=N_GRID_ACTIONS, n_goals=n_goals,
        transition=transition, mu0=mu0, goal_dist=goal_dist, phi=phi,
        reward=reward, gamma=spec.gamma,
        meta={"kind": "gridworld", "width": spec.width, "height": spec.height,
              "slip_prob": spec.slip_prob, "goal_block": spec.goal_block,
              "horizon": spec.horizon,
              "cells": [list(c) for c in free]},
    )


def validate(mdp: TabularGCMDP, atol: float = 1e-12) -> list:
    """Return a list of human-readable invariant violations (empty if valid)."""
    bad = []
    row_sums = mdp.transition.sum(axis=2)
    for s, a in zip(*np.nonzero(np.abs(row_sums - 1.0) > atol)):
        bad.append(f"transition row ({s},{a}) sums to {row_sums[s, a]:.12g}, "
                   f"residual {row_sums[s, a] - 1.0:.3g}")
    if (mdp.transition < 0).any():
        idx = np.argwhere(mdp.transition < 0)[0]
        bad.append(f"negative transition probability at {tuple(idx)}")
    if abs(mdp.mu0.sum() - 1.0) > atol:
        bad.append(f"mu0 sums to {mdp.mu0.sum():.12g}")
    if (mdp.mu0 < 0).any():
        bad.append(f"mu0 has a negative entry at {int(np.argmin(mdp.mu0))}")
    if abs(mdp.goal_dist.sum() - 1.0) > atol:
        bad.append(f"goal_dist sums to {mdp.goal_dist.sum():.12g}")
    if (mdp.goal_dist < 0).any():
        bad.append("goal_dist has a negative entry")
    expected_reward = (mdp.phi[:, None] == np.arange(mdp.n_goals)[None, :]).astype(float)
    if not np.array_equal(mdp.reward, expected_reward):
        bad.append("reward table is not the binary indicator r[s,g] = 1{phi(s)=g}")
    if not (0.0 < mdp.gamma < 1.0):
        bad.append(f"gamma {mdp.gamma} outside (0,1)")
    if mdp.phi.min() < 0 or mdp.phi.max() >= mdp.n_goals:
        bad.append("phi maps outside the goal index range")
    return bad


def sample_transition(mdp: TabularGCMDP, s: int, a: int,
                      rng: np.random.Generator) -> int:
    """Draw s' ~ T(s, a).  Deterministic given the generator state."""
    if not (0 <= s < mdp.n_states and 0 <= a < mdp.n_actions):
        raise IndexError(f"state/action ({s},{a}) out of range")
    return int(rng.choice(mdp.n_states, p=mdp.transition[s, a]))


def random_mdp(n_states: int, n_actions: int, n_goals: int, gamma: float,
               rng: np.random.Generator) -> TabularGCMDP:
    """Random dense MDP with dirichlet transition rows; used by test sweeps."""
    transition = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    mu0 = rng.dirichlet(np.ones(n_states))
    goal_dist = rng.dirichlet(np.ones(n_goals))
    phi = rng.integers(0, n_goals, size=n_states)
    # make phi surjective so every goal is achievable
    phi[:n_goals] = np.arange(n_goals)
    reward = (phi[:, None] == np.arange(n_goals)[None, :]).astype(float)
    return TabularGCMDP(
        n_states=n_states, n_actions=n_actions, n_goals=n_goals,
        transition=transition, mu0=mu0, goal_dist=goal_dist, phi=phi,
        reward=reward, gamma=gamma, meta={"kind": "random"},
    )


def to_json(mdp: TabularGCMDP) -> str:
    """Serialize to the documented JSON schema (ints exact, reals repr-exact)."""
    doc = {
        "n_states": mdp.n_states,
        "n_actions": mdp.n_actions,
        "n_goals": mdp.n_goals,
        "transition": mdp.transition.tolist(),
        "mu0": mdp.mu0.tolist(),
        "goal_dist": mdp.goal_dist.tolist(),
        "phi": mdp.phi.tolist(),
        "reward": mdp.reward.tolist(),
        "gamma": mdp.gamma,
        "meta": mdp.meta,
    }
    return json.dumps(doc)


def from_json(text: str) -> TabularGCMDP:
    doc = json.loads(text)
    return TabularGCMDP(
        n_states=int(doc["n_states"]), n_actions=int(doc["n_actions"]),
        n_goals=int(doc["n_goals"]),
        transition=np.asarray(doc["transition"], dtype=float),
        mu0=np.asarray(doc["mu0"], dtype=float),
        goal_dist=np.asarray(doc["goal_dist"], dtype=float),
        phi=np.asarray(doc["phi"], dtype=np.int64),
        reward=np.asarray(doc["reward"], dtype=float),
        gamma=float(doc["gamma"]), meta=doc.get("meta", {}),
    )
