#!/usr/bin/env python3
"""
Exception hierarchy for the switching-environment solver suite.

Configuration problems map to exit code 1, numerical failures to exit
code 2 and failed verification runs to exit code 3.
"""


class SwitchingError(Exception):
    """Base class for every error raised by the suite."""

    exit_code = 2


class ConfigError(SwitchingError, ValueError):
    """Invalid configuration, preset or model parameters."""

    exit_code = 1


class ParseError(ConfigError):
    """Malformed configuration document."""

    def __init__(self, message: str, line: int = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class UnknownKey(ParseError):
    """Configuration key outside the known schema."""


class MissingParam(ConfigError):
    """Required model parameter was not supplied."""


class ConstraintViolation(ConfigError):
    """Parameter or model invariant does not hold."""


class NumericalError(SwitchingError):
    """Failure inside a numerical routine."""

    exit_code = 2


class OutOfDomain(NumericalError):
    pass


class NotTwoState(NumericalError):
    pass


class Diverged(NumericalError):
    pass


class CFLDegenerate(NumericalError):
    pass


class NonFiniteState(NumericalError):
    pass


class SizeCap(NumericalError):
    pass


class DegenerateDerivative(NumericalError):
    pass


class SingularInterior(NumericalError):
    pass


class NotIntegrable(NumericalError):
    pass


class NegativeLambda(NumericalError):
    pass


class VerificationFailure(SwitchingError):
    """One or more verification checks failed."""

    exit_code = 3
