"""Shared exception types."""


class ParameterError(ValueError):
    """An argument violates an operation's precondition."""


class ConfigError(ValueError):
    """An experiment configuration is infeasible or inconsistent."""


class ResourceError(RuntimeError):
    """A requested object exceeds the configured memory budget."""


class BudgetError(RuntimeError):
    """A one-time-pad key has no pad bits left."""


class FormatError(ValueError):
    """A serialized container is malformed."""


class ProtocolViolation(RuntimeError):
    """An oracle broke the game contract (e.g. answer outside [0, 1])."""

    def __init__(self, message, transcript=None):
        super().__init__(message)
        self.transcript = transcript
