"""Exception types shared across the toolkit.

The CLI maps these onto exit codes: configuration / input problems exit
with 2, numeric divergence exits with 3.
"""


class LmbiasError(Exception):
    """Base class for all toolkit errors."""


class CorpusDecodeError(LmbiasError):
    """Raw corpus bytes are not valid UTF-8."""

    def __init__(self, byte_offset: int, detail: str = ""):
        self.byte_offset = byte_offset
        msg = f"invalid UTF-8 at byte offset {byte_offset}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class ConfigurationError(LmbiasError):
    """Invalid user-supplied configuration, word lists, or paths."""


class ParseError(LmbiasError):
    """A structured input file is malformed."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class InsufficientDataError(LmbiasError):
    """The training stream is too short for the requested configuration."""


class DivergenceError(LmbiasError):
    """Training produced a non-finite loss or parameter."""

    def __init__(self, message: str, epoch: int | None = None, step: int | None = None):
        self.epoch = epoch
        self.step = step
        where = []
        if epoch is not None:
            where.append(f"epoch {epoch}")
        if step is not None:
            where.append(f"step {step}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class DegenerateGeometryError(LmbiasError):
    """A debias operation hit a numerically degenerate direction, word, or pair."""


class VocabularyMismatchError(LmbiasError):
    """Artifacts built against different vocabularies were combined."""
