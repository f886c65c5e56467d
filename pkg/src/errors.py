#!/usr/bin/env python3
"""
Exception types shared by the numerical modules and the runner.

ConfigError maps to exit code 2, every NumericalFailure to exit code 3.
"""


class ConfigError(ValueError):
    """Invalid experiment configuration."""

    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        self.key = key
        self.line = line
        anchor = ""
        if line is not None:
            anchor += f"line {line}: "
        if key:
            anchor += f"{key}: "
        super().__init__(f"{anchor}{message}")


class NumericalFailure(RuntimeError):
    """A solve, integration or sweep failed; `partial` keeps what was computed."""

    def __init__(self, message: str, partial=None):
        super().__init__(message)
        self.partial = partial


class SolverError(NumericalFailure):
    def __init__(self, message: str, residual: float = float("nan"), partial=None):
        super().__init__(message, partial=partial)
        self.residual = residual


class InstabilityError(NumericalFailure):
    pass


class HomogenizationError(NumericalFailure):
    pass


class ControlError(NumericalFailure):
    def __init__(self, message: str, residual: float = float("nan"), partial=None):
        super().__init__(message, partial=partial)
        self.residual = residual
