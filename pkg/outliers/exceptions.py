"""
Numerical failures of the detection pipeline.

Input problems (bad CSV, malformed arguments) are reported with
django.core.exceptions.ValidationError; the classes below cover failures
that happen after the input has been accepted.
"""


class NumericalError(ArithmeticError):
    pass


class FitError(NumericalError):
    """The first-stage regression could not produce a usable fit."""

    def __init__(self, message, columns=None):
        super().__init__(message)
        self.columns = list(columns or [])


class DegenerateContrastError(NumericalError):
    """L'SigmaL is zero or negative, so the Wald statistic is undefined."""


class SimulationError(RuntimeError):
    """Too many replicates of a simulation study failed."""

    def __init__(self, message, failures=0, replicates=0):
        super().__init__(message)
        self.failures = failures
        self.replicates = replicates
