"""Optimistic policy optimization for stochastic contextual MDPs with finite function classes."""
from .core import (
    CmdpModel,
    LayeredStateSpace,
    Trajectory,
    hellinger_sq,
    occupancy_measures,
    optimal_policy,
    sample_trajectory,
    tv_distance,
    validate_model,
    value_backup,
    value_change_of_measure_check,
)
from .harness import (
    ExperimentConfig,
    RunRecord,
    baseline_known_model,
    baseline_uniform,
    expected_regret,
    generate_environment,
    lemma_suite,
    pseudo_regret,
    regret_bound,
    run_experiment,
    standard_config,
)
from .opo import AlgoParams, OPOCMDP, default_parameters, replay_policy_sequence
from .oracles import DynamicsClass, LossClass, TrajectoryDataset, least_squares_fit, log_loss_fit

__version__ = "0.1.0"
