"""Delayed Nash Q-learning for two-player general-sum Markov games."""

from .errors import (
    BoundViolation,
    ConfigError,
    InvalidSpec,
    NashQError,
    NoEquilibriumFound,
    NonConvergence,
    OracleNotConverged,
    TerminalState,
)
from .experiment import ExperimentConfig, RunRecord, detect_convergence, run_batch, run_single
from .grid_worlds import GRID1, GRID2, GridSpec, make_grid_world, preset
from .learners import DelayedNashQLearner, NashQLearner, StepEvents
from .markov_game import GameModel, JointPolicy, QTables, build_known_game, policy_evaluation
from .nash_oracle import OracleResult, is_nash_profile, nash_value_iteration
from .pac_monitor import MonitorLog, PacMonitor, PacParams, compute_bounds, known_set_membership
from .stage_game import BimatrixGame, EqClass, EquilibriumProfile, select_equilibrium, support_enumeration

__version__ = "0.1.0"
