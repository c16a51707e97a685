"""Exception hierarchy shared across the toolkit."""


class XModalError(Exception):
    """Base class for all toolkit errors."""


class CorpusFormatError(XModalError, ValueError):
    """Malformed corpus header or label."""


class CorpusRowError(CorpusFormatError):
    """A data row could not be ingested."""

    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


class DuplicateSampleError(CorpusRowError):
    pass


class ShapeError(XModalError, ValueError):
    pass


class NumericError(XModalError, ArithmeticError):
    pass


class CheckpointError(XModalError, ValueError):
    pass


class CapacityError(XModalError, ValueError):
    """Not enough identities or records to build a mini-batch."""


class ProtocolError(XModalError, ValueError):
    """An evaluation protocol cannot be instantiated on the given data."""
