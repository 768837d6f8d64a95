"""Exception and warning types shared across the package."""


class InvalidWindowError(ValueError):
    """Window geometry is inconsistent (holes outside, overlapping, zero area)."""


class InvalidMeshError(ValueError):
    """Requested cell size cannot tile the window."""


class DegenerateInputError(ValueError):
    """Input is too small or empty for the requested computation."""


class ResourceLimitError(RuntimeError):
    """Expected simulation size exceeds the configured cap."""


class NoClosedFormError(ValueError):
    """No closed-form pair correlation exists for this process kind."""


class SingularSystemError(RuntimeError):
    """Kriging covariance matrix could not be factorized."""


class SeriesDivergenceError(RuntimeError):
    """Neumann series for the covariance inverse diverged.

    The offending expansion (with its residual history) is attached as
    the ``expansion`` attribute.
    """

    def __init__(self, message, expansion=None):
        super().__init__(message)
        self.expansion = expansion


class PSDViolationError(RuntimeError):
    """A variance came out negative beyond numerical tolerance."""


class ConfigError(ValueError):
    """Run configuration is malformed; message names the section/key."""


class RidgeWarning(UserWarning):
    """A diagonal ridge was added to repair a non-PSD covariance matrix."""


class ClampWarning(UserWarning):
    """Negative intensity predictions were clamped to zero."""


class DegenerateWarning(UserWarning):
    """A degenerate input produced a trivial result (e.g. empty pattern)."""


class MonotonicityWarning(UserWarning):
    """An estimated K-function decreased beyond noise level."""
