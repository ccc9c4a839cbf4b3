"""Exception hierarchy shared by every module."""

from __future__ import annotations


class O2OError(Exception):
    """Base class for all errors raised by o2oselect."""


class InputError(O2OError, ValueError):
    """Malformed or non-finite input data."""


class PreconditionError(O2OError, ValueError):
    """A documented precondition of an operation was violated."""


class FormatError(InputError):
    """A trace or config file could not be parsed."""


class ConfigError(InputError):
    """Experiment configuration failed validation.

    All violations found are collected in ``problems`` so a caller can
    report them in one pass instead of fixing them one at a time.
    """

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class EnvError(O2OError, RuntimeError):
    """The simulated environment was asked for something it cannot do."""


class InvariantViolation(O2OError, RuntimeError):
    """An internal bookkeeping invariant broke. Always a defect."""


class DegenerateNormalizationError(O2OError, ValueError):
    """Min-max normalization with max <= min."""
