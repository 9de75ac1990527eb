"""One-seed gridworld comparison of every training arm.

Collects a uniform-random offline dataset on a 5x5 gridworld, trains each
algorithm variant on the same data with a reduced step budget, and prints
mean discounted return over a shared evaluation protocol. This is a
single-seed sketch of the full ablation (`gofar ablate-her`); expect the
ordering, not the exact numbers, to be stable.
"""
import numpy as np

from gofar.harness import five_by_five, run_grid
from gofar.neural import ALGOS, TrainConfig

DEMO_CONFIG = TrainConfig(disc_steps=600, value_steps=6000,
                          policy_steps=4000, batch=256, gamma=0.9,
                          hidden=64, value_avg_tail=0.3, policy_avg_tail=0.3)


def main():
    mdp = five_by_five()
    print(f"{'algo':>14} {'return':>8} {'success':>8} {'unstable':>9}")
    for algo in ALGOS:
        summary, records, agent = run_grid(algo, mdp, run_seed=0,
                                           n_traj=800, config=DEMO_CONFIG)
        succ = np.mean([r.success for r in records])
        print(f"{algo:>14} {summary['discounted_return']:>8.3f} "
              f"{succ:>8.2f} {str(agent.unstable):>9}")
    print("\nThings to look for: removing hindsight relabeling cripples the "
          "cloning baselines\n(gcsl/wgcsl-noher) but the occupancy-matching "
          "arm stays close to its relabeled\nvariant; the KL-conjugate arm "
          "gets flagged unstable; the discriminator-free\nbinary arm "
          "collapses at this scale.")


if __name__ == "__main__":
    main()
