"""Follower-agnostic Stackelberg optimization: zeroth-order leader steps against black-box followers."""
from __future__ import annotations

__version__ = "0.1.0"

from .core import (  # noqa: E402
    LeaderProblem,
    ProblemConstants,
    RateCertificate,
    ScheduleParams,
    alpha_of_K,
    choose_inner_iterations,
    delta_t,
    eta_t,
)
from .errors import (  # noqa: E402
    BoundaryRegimeError,
    ConfigError,
    ConvergenceError,
    DiagnosticFailure,
    FollowerAgnosticError,
    MissingStructureError,
    NonFiniteFollowerError,
    RunAbortedError,
    ScheduleError,
)
from .estimator import RngStream, oracle_estimator, sample_unit_sphere, two_point_estimator  # noqa: E402
from .lower_level import FollowerSystem, project_box, project_simplex, run_inner  # noqa: E402
from .problems import (  # noqa: E402
    LogCoshBilevel,
    QuadraticBilevel,
    RoutingGame,
    RoutingInstance,
    StrictSaddleProblem,
)
from .solver import RunTrace, SolverConfig, min_grad_stationarity, run_algorithm  # noqa: E402

__all__ = [
    "__version__",
    "BoundaryRegimeError",
    "ConfigError",
    "ConvergenceError",
    "DiagnosticFailure",
    "FollowerAgnosticError",
    "FollowerSystem",
    "LeaderProblem",
    "LogCoshBilevel",
    "MissingStructureError",
    "NonFiniteFollowerError",
    "ProblemConstants",
    "QuadraticBilevel",
    "RateCertificate",
    "RngStream",
    "RoutingGame",
    "RoutingInstance",
    "RunAbortedError",
    "RunTrace",
    "ScheduleError",
    "ScheduleParams",
    "SolverConfig",
    "StrictSaddleProblem",
    "alpha_of_K",
    "choose_inner_iterations",
    "delta_t",
    "eta_t",
    "min_grad_stationarity",
    "oracle_estimator",
    "project_box",
    "project_simplex",
    "run_algorithm",
    "run_inner",
    "sample_unit_sphere",
    "two_point_estimator",
]
