"""Flat goal-reaching vs. subgoal planning on out-of-range goals.

Collects random-walk data in a two-room gridworld, fits the goal-space
transition model and planner value on it, then evaluates on a new agent
(king moves, different action space) commanded to reach goals on the far
side of the wall. A greedy low-level controller fails head-on into the
wall; the planner routes it through the doorway.
"""
import numpy as np

from gofar.dataset import collect
from gofar.mdp import TabularPolicy, build_gridworld
from gofar.planner import (build_king_gridworld, transfer_suite,
                           two_room_spec)


def main():
    spec = two_room_spec()
    source = build_gridworld(spec)
    target = build_king_gridworld(spec)
    data = collect(source, TabularPolicy.uniform(source), n_traj=400,
                   horizon=60, seed=0, descriptor="uniform-random")
    rows = transfer_suite(data, source, target, n_tasks=60, seed=0)
    for key in ("raw", "hierarchical", "oracle"):
        rate = np.mean([r[key] for r in rows])
        print(f"{key:>13}: {rate:.2f} success on cross-wall goals")
    print("\nThe flat controller greedily walks into the wall; chaining "
          "planned subgoals\nthrough the doorway recovers most of what an "
          "oracle subgoal sequence achieves.")


if __name__ == "__main__":
    main()
