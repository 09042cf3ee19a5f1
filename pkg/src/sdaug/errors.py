class SdaugError(Exception):
    """Base class for all package errors."""


class ContractError(SdaugError, ValueError):
    """An operation was called with arguments violating its preconditions."""


class BufferEmpty(SdaugError):
    """The augmentation buffer has no entries to sample from."""


class CorpusError(SdaugError):
    """Corpus or vocabulary file could not be read or parsed."""


class DivergenceError(SdaugError):
    """Training produced a non-finite loss or reward."""


class CheckFailure(SdaugError):
    """A gradient/value verification check did not pass."""
