"""Exception hierarchy shared across the package."""


class ChunkPoolError(Exception):
    """Base class for every error raised by chunkpool."""


class DimensionError(ChunkPoolError, ValueError):
    pass


class ShapeError(DimensionError):
    pass


class DomainError(ChunkPoolError, ValueError):
    pass


class InvalidMaskError(ChunkPoolError, ValueError):
    pass


class EmptyReductionError(ChunkPoolError, ValueError):
    pass


class TokenIndexError(ChunkPoolError, IndexError):
    pass


class ConfigError(ChunkPoolError, ValueError):
    pass


class SyntheticSpecError(ConfigError):
    pass


class VocabFormatError(ChunkPoolError, ValueError):
    pass


class DuplicateEntryError(VocabFormatError):
    pass


class CorpusError(ChunkPoolError, ValueError):
    pass


class CorpusParseError(CorpusError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class LabelError(CorpusError):
    pass


class DuplicateIdError(CorpusError):
    pass


class AlignmentError(ChunkPoolError, ValueError):
    pass


class CheckpointError(ChunkPoolError):
    pass


class NotACheckpointError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CorruptCheckpointError(CheckpointError):
    pass


class NumericError(ChunkPoolError, ArithmeticError):
    def __init__(self, epoch: int, message: str = "non-finite loss"):
        super().__init__(f"epoch {epoch}: {message}")
        self.epoch = epoch
