"""Offline goal-conditioned RL via f-advantage regression.

Exact tabular duals with closed-form chi-squared solutions, a small numpy
neural path with discriminator rewards and advantage-weighted regression,
hindsight-relabeling baselines, a goal-space subgoal planner, and the
experiment harness that ties them together.
"""

from .fdiv import CHI2, KL, FDivergence, f_star_value, weight
from .mdp import (GridworldSpec, TabularGCMDP, TabularPolicy, build_gridworld,
                  random_mdp)
from .occupancy import OccupancyTensor, expected_return, solve_occupancy
from .dataset import OfflineDataset, RelabelSpec, collect, empirical_occupancy
from .tabular import (AugmentedSystem, ValueTable, build_system, dual_value,
                      extract_policy, far_policy, primal_oracle,
                      recover_dstar, solve_dual_chi2)
from .nets import Adam, MlpParams, init_mlp, mlp_forward, mlp_grad
from .neural import (ALGOS, GoalPolicy, PointReachEnv, TrainConfig,
                     TrainedAgent, bank_from_point, bank_from_tabular,
                     collect_pointreach, train_agent, train_discriminator,
                     train_gcsl, train_policy_far, train_value, train_wgcsl)
from .planner import (PlannerPolicy, SubgoalPlan, hierarchical_execute, plan,
                      train_goal_value, train_planner, transfer_suite)
from .harness import (MetricsRecord, ablation_her, ablation_noise,
                      evaluate_grid, evaluate_point, plan_transfer, run_all)

__version__ = "0.1.0"
