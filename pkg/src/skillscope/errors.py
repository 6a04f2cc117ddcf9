"""Exception hierarchy shared by every stage of the pipeline.

Each error class carries a stable ``exit_code`` so the command-line layer can
map failures onto its documented contract: 2 usage, 3 IO/parse, 4 data shape,
5 schema.
"""
from __future__ import annotations


class SkillscopeError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 1


class ParseError(SkillscopeError):
    """A log or CSV file could not be parsed."""

    exit_code = 3

    def __init__(self, message: str, *, source: str | None = None,
                 line: int | None = None):
        self.source = source
        self.line = line
        prefix = ""
        if source is not None and line is not None:
            prefix = f"{source}:{line}: "
        elif source is not None:
            prefix = f"{source}: "
        elif line is not None:
            prefix = f"line {line}: "
        super().__init__(prefix + message)


class MalformedLineError(ParseError):
    pass


class NonMonotonicTimeError(ParseError):
    pass


class CoordOutOfRangeError(ParseError):
    pass


class IoError(SkillscopeError):
    """Filesystem read or write failed."""

    exit_code = 3


class DataShapeError(SkillscopeError):
    """Input data is well-formed but unusable for the requested operation."""

    exit_code = 4


class EmptySessionError(DataShapeError):
    pass


class SessionTooShortError(DataShapeError):
    pass


class WindowOutOfBoundsError(DataShapeError):
    pass


class InsufficientGazeError(DataShapeError):
    pass


class ConstantColumnError(DataShapeError):
    pass


class EmptySampleError(DataShapeError):
    pass


class MissingClassError(DataShapeError):
    pass


class SingleClassError(DataShapeError):
    pass


class EmptyDatasetError(DataShapeError):
    pass


class SinglePlayerError(DataShapeError):
    pass


class MissingFeatureError(DataShapeError):
    pass


class LengthMismatchError(DataShapeError):
    pass


class NoSplitsError(DataShapeError):
    pass


class NoValidGazeError(DataShapeError):
    pass


class InvalidDurationError(DataShapeError):
    pass


class SchemaError(SkillscopeError):
    """A model file or config does not match the expected schema."""

    exit_code = 5
