"""Exception hierarchy shared across the pipeline."""


class NightburstError(Exception):
    """Base class for all engine errors."""


class InputError(NightburstError):
    """Malformed or inconsistent input data (files, manifests, arguments)."""


class NumericError(NightburstError):
    """A numeric routine failed to converge or produced non-finite values."""


class StageError(NightburstError):
    """Wraps an error raised inside a named pipeline stage."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}': {cause}")
        self.stage = stage
        self.cause = cause
