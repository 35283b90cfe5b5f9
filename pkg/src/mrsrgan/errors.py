"""Exception hierarchy shared across the toolkit."""


class MRSRError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(MRSRError, ValueError):
    """Input or configuration rejected before any compute (CLI exit code 1)."""


class IngestError(MRSRError):
    pass


class NormalizeError(MRSRError):
    pass


class SplitError(ValidationError):
    pass


class DegradeError(MRSRError):
    pass


class ConfigError(ValidationError):
    pass


class ShapeError(MRSRError, ValueError):
    pass


class DomainError(MRSRError, ValueError):
    pass


class TrainError(MRSRError):
    pass


class DivergenceError(TrainError):
    def __init__(self, message, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint


class CheckpointError(MRSRError):
    pass


class PlanError(ValidationError):
    pass


class FuseError(MRSRError):
    pass


class EvalError(MRSRError):
    def __init__(self, method, message):
        super().__init__(f"{method}: {message}")
        self.method = method
