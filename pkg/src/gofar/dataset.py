"""Offline dataset collection, empirical occupancies, hindsight relabeling,
and JSON-lines persistence."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .mdp import TabularGCMDP, TabularPolicy
from .occupancy import OccupancyTensor

FILE_VERSION = 1

NONE = "none"
FUTURE_UNIFORM = "future_uniform"


@dataclass(frozen=True)
class Transition:
    s: int
    a: int
    r: float
    s_next: int
    g: int
    t: int


@dataclass(frozen=True)
class Trajectory:
    transitions: tuple
    commanded_goal: int
    seed: int

    def __post_init__(self):
        for prev, nxt in zip(self.transitions, self.transitions[1:]):
            if prev.s_next != nxt.s:
                raise ValueError(f"trajectory breaks at t={prev.t}: "
                                 f"s_next {prev.s_next} != next s {nxt.s}")


@dataclass(frozen=True)
class OfflineDataset:
    trajectories: tuple
    mdp_fingerprint: str
    behavior_descriptor: str = ""

    @property
    def n_transitions(self) -> int:
        return sum(len(tr.transitions) for tr in self.trajectories)


@dataclass(frozen=True)
class RelabelSpec:
    strategy: str = NONE
    her_ratio: float = 0.0

    def __post_init__(self):
        if self.strategy not in (NONE, FUTURE_UNIFORM):
            raise ValueError(f"unknown relabel strategy {self.strategy!r}")
        if not (0.0 <= self.her_ratio <= 1.0):
            raise ValueError("her_ratio must lie in [0,1]")
        if (self.her_ratio == 0.0) != (self.strategy == NONE):
            raise ValueError("her_ratio must be 0 exactly when strategy is 'none'")


def rollout(mdp: TabularGCMDP, policy: TabularPolicy, g: int, horizon: int,
            seed: int) -> Trajectory:
    rng = np.random.default_rng(seed)
    s = int(rng.choice(mdp.n_states, p=mdp.mu0))
    steps = []
    for t in range(horizon):
        a = int(rng.choice(mdp.n_actions, p=policy.probs[s, g]))
        s_next = int(rng.choice(mdp.n_states, p=mdp.transition[s, a]))
        steps.append(Transition(s=s, a=a, r=float(mdp.reward[s, g]),
                                s_next=s_next, g=g, t=t))
        s = s_next
    return Trajectory(transitions=tuple(steps), commanded_goal=g, seed=seed)


def collect(mdp: TabularGCMDP, behavior: TabularPolicy, n_traj: int,
            horizon: int, seed: int, descriptor: str = "") -> OfflineDataset:
    """Collect n_traj trajectories; commanded goals drawn from p(g), starts
    from mu0.  Per-trajectory seeds are derived from the master seed, so the
    result is reproducible and trajectories could be generated in parallel."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    master = np.random.default_rng(seed)
    goal_seq = master.choice(mdp.n_goals, size=n_traj, p=mdp.goal_dist)
    traj_seeds = master.integers(0, 2**63 - 1, size=n_traj)
    trajectories = tuple(
        rollout(mdp, behavior, int(g), horizon, int(ts))
        for g, ts in zip(goal_seq, traj_seeds)
    )
    return OfflineDataset(trajectories=trajectories,
                          mdp_fingerprint=mdp.fingerprint(),
                          behavior_descriptor=descriptor)


def empirical_occupancy(dataset: OfflineDataset, mdp: TabularGCMDP) -> OccupancyTensor:
    """Discounted empirical occupancy: a transition at time t contributes
    weight (1-gamma) gamma^t to bin (s, a, commanded g); renormalized per
    observed goal.  Goals with zero visitation stay all-zero (coverage gap,
    never imputed)."""
    if not dataset.trajectories:
        raise ValueError("empty dataset")
    d = np.zeros((mdp.n_states, mdp.n_actions, mdp.n_goals))
    for traj in dataset.trajectories:
        g = traj.commanded_goal
        for tr in traj.transitions:
            d[tr.s, tr.a, g] += (1.0 - mdp.gamma) * mdp.gamma ** tr.t
    mass = d.sum(axis=(0, 1))
    seen = mass > 0
    d[:, :, seen] /= mass[None, None, seen]
    return OccupancyTensor(d)


def transition_arrays(dataset: OfflineDataset):
    """Flatten to parallel arrays (s, a, r, s_next, g, t, traj_index)."""
    rows = [(tr.s, tr.a, tr.r, tr.s_next, traj.commanded_goal, tr.t, i)
            for i, traj in enumerate(dataset.trajectories)
            for tr in traj.transitions]
    arr = np.array(rows, dtype=float)
    return (arr[:, 0].astype(int), arr[:, 1].astype(int), arr[:, 2],
            arr[:, 3].astype(int), arr[:, 4].astype(int),
            arr[:, 5].astype(int), arr[:, 6].astype(int))


def relabel_minibatch(dataset: OfflineDataset, spec: RelabelSpec, batch: int,
                      rng: np.random.Generator, mdp: TabularGCMDP) -> list:
    """Sample a minibatch of (s, a, r, s_next, g) tuples.

    A her_ratio fraction gets its goal replaced by phi of a uniformly drawn
    strictly-future state of the same trajectory, with the reward recomputed
    as r(s; g~); the rest keep their commanded goals."""
    trajs = dataset.trajectories
    out = []
    for _ in range(batch):
        traj = trajs[int(rng.integers(len(trajs)))]
        tr = traj.transitions[int(rng.integers(len(traj.transitions)))]
        g = traj.commanded_goal
        if spec.strategy == FUTURE_UNIFORM and rng.random() < spec.her_ratio:
            # future achieved states: s_next of steps t, t+1, ..., T-1
            future = [u.s_next for u in traj.transitions[tr.t:]]
            g = int(mdp.phi[future[int(rng.integers(len(future)))]])
        out.append((tr.s, tr.a, float(mdp.reward[tr.s, g]), tr.s_next, g))
    return out


def save(dataset: OfflineDataset, path: str) -> None:
    """One JSON header line, then one JSON line per trajectory."""
    with open(path, "w") as fh:
        fh.write(json.dumps({"version": FILE_VERSION,
                             "fingerprint": dataset.mdp_fingerprint,
                             "behavior": dataset.behavior_descriptor}) + "\n")
        for traj in dataset.trajectories:
            steps = [[tr.s, tr.a, tr.r, tr.s_next] for tr in traj.transitions]
            fh.write(json.dumps({"g": traj.commanded_goal, "seed": traj.seed,
                                 "steps": steps}) + "\n")


def load(path: str, mdp: TabularGCMDP | None = None) -> OfflineDataset:
    """Load a dataset file; if an MDP is given, its fingerprint must match."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ValueError(f"{path}: empty dataset file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise ValueError(f"{path}: malformed header at byte {e.pos}") from e
    offset = len(lines[0]) + 1
    if header.get("version") != FILE_VERSION:
        raise ValueError(f"{path}: version {header.get('version')} != {FILE_VERSION}")
    if mdp is not None and header["fingerprint"] != mdp.fingerprint():
        raise ValueError(f"{path}: dataset fingerprint {header['fingerprint']} "
                         f"does not match MDP fingerprint {mdp.fingerprint()}")
    trajectories = []
    for line in lines[1:]:
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as e:
            raise ValueError(f"{path}: parse error near byte {offset + e.pos}") from e
        offset += len(line) + 1
        steps = tuple(
            Transition(s=int(s), a=int(a), r=float(r), s_next=int(sn),
                       g=int(doc["g"]), t=t)
            for t, (s, a, r, sn) in enumerate(doc["steps"])
        )
        trajectories.append(Trajectory(transitions=steps,
                                       commanded_goal=int(doc["g"]),
                                       seed=int(doc["seed"])))
    return OfflineDataset(trajectories=tuple(trajectories),
                          mdp_fingerprint=header["fingerprint"],
                          behavior_descriptor=header.get("behavior", ""))
