"""Exception types shared across the package."""


class IGDError(Exception):
    """Base class for all errors raised by this package."""


class DataError(IGDError, ValueError):
    """Input data failed validation (bad file, unknown id, broken invariant)."""


class ConfigError(IGDError, ValueError):
    """A parameter or configuration value is out of its allowed range."""


class PrefixError(DataError):
    """A token prefix leaves the trie.

    ``step`` is the 1-based position of the first token that has no matching edge.
    """

    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


class StageError(IGDError):
    """A pipeline stage failed; ``cause`` is the original exception."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause
