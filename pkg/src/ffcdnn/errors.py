"""Exception hierarchy shared across the pipeline.

Two broad families matter for the CLI exit-code contract: input/data
problems (exit code 2) and numeric failures (exit code 3).
"""


class PipelineError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class InputDataError(PipelineError):
    """Malformed, missing, or out-of-contract input data (exit code 2)."""

    exit_code = 2


class CoverageError(InputDataError):
    """A spectrum does not cover the wavelength support of a sensor band."""


class NumericFailure(PipelineError):
    """A numeric computation left its valid domain (exit code 3)."""

    exit_code = 3


class SaturationError(NumericFailure):
    """A vegetation-index inversion was asked to evaluate at or beyond its asymptote."""


class SpectrumSymmetryError(NumericFailure):
    """Real output requested from a spectrum that is not conjugate-symmetric."""


class NonDifferentiablePointError(NumericFailure):
    """Finite-difference quotients diverge as the step shrinks."""
