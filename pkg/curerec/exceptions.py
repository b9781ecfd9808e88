"""Exception hierarchy shared by every app."""


class CureError(Exception):
    """Base class for all domain errors."""


class ConfigurationError(CureError):
    """Invalid run, model or unlearning configuration."""


class DataError(CureError):
    """Interaction data cannot be used."""


class ParseError(DataError):
    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


class EmptyDatasetError(DataError):
    pass


class SplitError(DataError):
    """A split or deletion request produced an unusable partition."""


class PromptError(DataError):
    """A prompt cannot be rendered (empty history, unknown item name...)."""


class SequenceTooLongError(CureError):
    pass


class UnknownEdgeError(CureError):
    pass


class TrainingDivergedError(CureError):
    pass


class NonFiniteGradientError(CureError):
    def __init__(self, where: str):
        self.where = where
        super().__init__(f"non-finite gradient at {where}")


class PatchingAlignmentError(CureError):
    """Clean and corrupt prompts are not positionally aligned."""


class CorruptSampleError(CureError):
    pass


class ReportInputError(CureError):
    pass


class CircuitError(CureError):
    """A circuit violates connectivity or a partition is not a partition."""
