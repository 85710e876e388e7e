"""Exception types raised across the package."""


class KSMError(Exception):
    """Base class for all package errors."""


class DimensionError(KSMError, ValueError):
    """Array shapes are inconsistent with each other."""


class NotPositiveDefiniteError(KSMError, ValueError):
    """``L + lambda*I`` is not positive definite.

    The smallest eigenvalue found is kept on ``smallest_eigenvalue``.
    """

    def __init__(self, smallest_eigenvalue, message=None):
        self.smallest_eigenvalue = float(smallest_eigenvalue)
        if message is None:
            message = (
                "L + lambda*I is not positive definite "
                f"(smallest eigenvalue {self.smallest_eigenvalue:.6g})"
            )
        super().__init__(message)


class StepSizeError(KSMError, ValueError):
    """Step size of the recurrent dynamics is too large to converge."""


class TrainingError(KSMError, RuntimeError):
    """Training aborted because a quantity became non-finite or invalid."""

    def __init__(self, message, iteration=None, parameter=None):
        self.iteration = iteration
        self.parameter = parameter
        super().__init__(message)


class IdxFormatError(KSMError, ValueError):
    """An IDX file is malformed."""


class ConfigError(KSMError, ValueError):
    """A configuration file or value failed validation.

    ``field`` names the offending key (dotted path) when known.
    """

    def __init__(self, message, field=None):
        self.field = field
        if field is not None:
            message = f"{field}: {message}"
        super().__init__(message)


class ConvergenceWarning(UserWarning):
    """Iterative routine stopped before reaching its tolerance."""
