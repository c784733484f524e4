"""Exception hierarchy shared by every stage of the pipeline."""


class RLHGNNError(Exception):
    """Base class for all errors raised by this package."""


class SchemaError(RLHGNNError):
    """A required CSV column is missing."""


class LogParseError(RLHGNNError):
    """A CSV row could not be parsed; carries the 1-based line number."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class EmptyLogError(RLHGNNError):
    pass


class SplitError(RLHGNNError):
    pass


class ParameterError(RLHGNNError, ValueError):
    pass


class FitError(RLHGNNError):
    pass


class ShapeError(RLHGNNError, ValueError):
    pass


class ConsistencyError(RLHGNNError):
    pass


class TrainingError(RLHGNNError):
    pass


class PipelineOrderError(RLHGNNError):
    pass


class ReplayBufferError(RLHGNNError):
    pass


class ArtifactError(RLHGNNError):
    pass


class ConfigError(RLHGNNError):
    pass


class StageError(RLHGNNError):
    """Wraps a failure inside one pipeline stage and names the stage."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")
