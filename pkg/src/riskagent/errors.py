"""Exception hierarchy shared across the package."""


class RiskAgentError(Exception):
    """Base class for user-facing errors (CLI exit code 1)."""


class DataError(RiskAgentError):
    pass


class ConfigError(RiskAgentError):
    pass


class EnvError(RiskAgentError):
    pass


class CheckpointError(RiskAgentError):
    pass


class TransportError(RiskAgentError):
    """Chat endpoint kept failing after the retry budget was spent."""

    def __init__(self, message, status=None, attempts=0):
        super().__init__(message)
        self.status = status
        self.attempts = attempts


class ScoreTimeoutError(TransportError):
    pass
