"""Exception hierarchy shared by the library and the command line front end."""


class PlatoonError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(PlatoonError, ValueError):
    """Invalid parameters, scenario or configuration."""


class DegenerateInputError(PlatoonError, ValueError):
    """A transfer function was evaluated on a pole."""


class SingularSystemError(PlatoonError, ArithmeticError):
    pass


class RegionEmptyError(PlatoonError):
    """The (kv, kp) feasible set is empty for the requested headway."""


class CertificationError(PlatoonError):
    """A synthesized design failed its frequency-domain certification."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class NotApplicableError(PlatoonError):
    """The requested construction does not apply to the given inputs."""


class SearchExhaustedError(PlatoonError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class InsufficientHistoryError(PlatoonError):
    """A delayed read fell before the start of the recorded history."""


class SimulationBlowupError(PlatoonError):
    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time
