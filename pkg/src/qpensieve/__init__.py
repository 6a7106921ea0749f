"""Multi-objective soft reinforcement learning with Q-snapshot policy improvement.

Tabular tier: exact soft policy iteration over a preference grid
(:mod:`qpensieve.planner`).  Function-approximation tier: a
preference-conditioned soft actor-critic with a Q-snapshot replay buffer
(:mod:`qpensieve.agent`).  Plus Deep Sea Treasure environments, return-set
metrics and a seeded experiment harness.
"""

from .agent import AgentConfig, QPensieveAgent, QSnapshotBuffer, ReplayBuffer, train
from .envs import ContinuousDST, TabularDST, make_env, rollout
from .exceptions import (
    ConfigError,
    InvalidArgumentError,
    InvalidStateError,
    NonConvergenceError,
    NumericalError,
    QPensieveError,
)
from .harness import ExperimentConfig, RunRecord, emit_plot_data, evaluate, run
from .metrics import episodic_dominance, hypervolume, pareto_filter, utility
from .momdp import Preference, PreferenceGrid, TabularMOMDP, random_momdp, scalarize, uniform_simplex_sample
from .planner import (
    QPensievePlanner,
    mo_soft_backup,
    pensieve_improve,
    q_pensieve_policy_iteration,
    scalarized_soft_vi,
    soft_policy_evaluation,
)

__version__ = "0.1.0"

__all__ = [
    "AgentConfig",
    "ConfigError",
    "ContinuousDST",
    "ExperimentConfig",
    "InvalidArgumentError",
    "InvalidStateError",
    "NonConvergenceError",
    "NumericalError",
    "Preference",
    "PreferenceGrid",
    "QPensieveAgent",
    "QPensieveError",
    "QPensievePlanner",
    "QSnapshotBuffer",
    "ReplayBuffer",
    "RunRecord",
    "TabularDST",
    "TabularMOMDP",
    "emit_plot_data",
    "episodic_dominance",
    "evaluate",
    "hypervolume",
    "make_env",
    "mo_soft_backup",
    "pareto_filter",
    "pensieve_improve",
    "q_pensieve_policy_iteration",
    "random_momdp",
    "rollout",
    "run",
    "scalarize",
    "scalarized_soft_vi",
    "soft_policy_evaluation",
    "train",
    "uniform_simplex_sample",
    "utility",
]
