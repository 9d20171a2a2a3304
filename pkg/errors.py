"""
Error taxonomy for the solver.
Library code raises these; only cli.main turns them into exit codes.
"""

from typing import Dict, Optional


class SolverBaseError(Exception):
    """Base class; every subclass carries the process exit code for its category."""
    exit_code = 1

    def __init__(self, message: str, diagnostics: Optional[Dict] = None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})

    def __str__(self):
        base = super().__str__()
        if not self.diagnostics:
            return base
        details = ', '.join(f'{k}={v}' for k, v in self.diagnostics.items())
        return f'{base} ({details})'


class ConfigError(SolverBaseError):
    """Unknown key, malformed value or out-of-range parameter."""
    exit_code = 2


class DomainError(SolverBaseError):
    """Phase value outside (-1, 1) or inadmissible initial data."""
    exit_code = 3


class CompatibilityError(SolverBaseError):
    """Mean-zero or mass-compatibility precondition violated, or mismatched grid shapes."""
    exit_code = 3


class SolverError(SolverBaseError):
    exit_code = 4


class PositivityError(SolverError):
    """An iterate left (-1, 1); the fraction-to-boundary cap should make this unreachable."""


class OutputError(SolverBaseError):
    exit_code = 5


CHECK_FAILURE_EXIT = 6
