"""Exception hierarchy shared across the package.

The CLI maps each family onto a documented exit code.
"""


class DocNMTError(Exception):
    """Base class for every error raised by docnmt."""


class NumericsError(DocNMTError):
    pass


class FullyMaskedRow(NumericsError):
    pass


class NonScalarLoss(NumericsError):
    pass


class CorpusError(DocNMTError):
    pass


class AlignmentMismatch(CorpusError):
    pass


class EmptyCorpus(CorpusError):
    pass


class UnknownId(CorpusError):
    pass


class ContextError(DocNMTError):
    pass


class SourceTooLong(ContextError):
    pass


class EmptySource(ContextError):
    pass


class ModelError(DocNMTError):
    pass


class PositionOverflow(ModelError):
    pass


class IdOutOfRange(ModelError):
    pass


class EmptyPrefix(ModelError):
    pass


class IndexOutOfRange(ModelError):
    pass


class CheckpointError(DocNMTError):
    pass


class BadMagic(CheckpointError):
    pass


class TruncatedFile(CheckpointError):
    pass


class DuplicateName(CheckpointError):
    pass


class ShapeMismatch(CheckpointError):
    pass


class TrainingDiverged(DocNMTError):
    """Loss became non-finite; training stops instead of continuing on NaNs."""


class ExampleTooLong(DocNMTError):
    pass


class LengthMismatch(DocNMTError):
    pass


class ConfigError(DocNMTError):
    pass
