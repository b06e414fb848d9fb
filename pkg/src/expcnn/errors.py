"""Exception types shared across the library."""


class ExpcnnError(Exception):
    """Base class for every error raised by this library."""


class ShapeError(ExpcnnError):
    """Operand shapes violate an operation's contract."""


class NumericError(ExpcnnError):
    """An operation produced non-finite values."""


class FormatError(ExpcnnError):
    """A serialized payload violates its format (magic, header, layout)."""


class CorruptionError(FormatError):
    """A recognized format whose payload is inconsistent or damaged."""


class LabelingError(ExpcnnError):
    """A filename does not follow the <cls>.<number> naming convention."""


class UsageError(ExpcnnError):
    """An operation was invoked outside its preconditions."""


class TrainingError(ExpcnnError):
    """Training diverged or could not proceed."""
