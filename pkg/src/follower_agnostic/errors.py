from __future__ import annotations

from typing import Optional


EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUN_ABORT = 3
EXIT_DIAGNOSTIC = 4


class FollowerAgnosticError(Exception):
    """Root of every error raised by the package."""


class ConfigError(FollowerAgnosticError, ValueError):
    exit_code = EXIT_CONFIG


class ScheduleError(ConfigError):
    pass


class RunAbortedError(FollowerAgnosticError, RuntimeError):
    exit_code = EXIT_RUN_ABORT

    def __init__(self, message: str, round_index: Optional[int] = None) -> None:
        super().__init__(message)
        self.round_index = round_index


class NonFiniteFollowerError(RunAbortedError):
    """A follower update produced a non-finite gradient."""


class MissingStructureError(FollowerAgnosticError, LookupError):
    pass


class BoundaryRegimeError(FollowerAgnosticError, ValueError):
    pass


class ConvergenceError(FollowerAgnosticError, RuntimeError):
    pass


class DiagnosticFailure(FollowerAgnosticError, AssertionError):
    exit_code = EXIT_DIAGNOSTIC
