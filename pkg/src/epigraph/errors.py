"""Exception types shared across the package."""


class EpigraphError(Exception):
    """Base class for all package errors."""


class InvalidInputError(EpigraphError):
    pass


class InvalidRotationError(InvalidInputError):
    pass


class InvalidEssentialError(InvalidInputError):
    pass


class ShapeError(InvalidInputError):
    pass


class DegenerateGeometryError(EpigraphError):
    pass


class InsufficientCorrespondencesError(EpigraphError):
    pass


class AmbiguousCheiralityError(EpigraphError):
    """Cheirality vote ended in a tie; carries the tied candidates."""

    def __init__(self, message, candidates):
        super().__init__(message)
        self.candidates = candidates


class UnprojectableSceneError(EpigraphError):
    pass


class EmptyGraphError(EpigraphError):
    pass


class EmptySamplingError(EpigraphError):
    pass


class FormatError(EpigraphError):
    """Malformed file content; carries the offending line number when known."""

    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class SchemaVersionError(FormatError):
    pass


class ValidationError(EpigraphError):
    pass


class StateError(EpigraphError):
    pass


class ConfigError(EpigraphError):
    pass
