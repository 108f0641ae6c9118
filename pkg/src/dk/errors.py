"""Exception types shared across the package."""


class DKError(Exception):
    """Base class for package errors."""


class ConfigError(DKError):
    """Invalid or malformed run configuration.

    ``key`` carries the dotted config path that failed validation so the
    CLI can point at the offending line.
    """

    def __init__(self, message, key=None):
        self.key = key
        if key is not None:
            message = f"{key}: {message}"
        super().__init__(message)


class BlowupError(DKError):
    """A time step produced non-finite values."""

    def __init__(self, step_index, t, detail=""):
        self.step_index = step_index
        self.t = t
        msg = f"non-finite state at step {step_index}, t={t:.6g}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class SolverError(DKError):
    """Iterative solver failed to converge."""


class SupportError(DKError):
    """Test function support violates the required compact-support box."""
