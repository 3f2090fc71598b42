"""Exception hierarchy shared across the engine.

Every error raised by library code derives from ActrecError so callers can
catch the whole family at the CLI boundary.
"""


class ActrecError(Exception):
    """Base class for all engine errors."""


# --- dataset ingestion ---------------------------------------------------

class MissingColumn(ActrecError):
    def __init__(self, column: str):
        super().__init__(f"required column missing from header: {column!r}")
        self.column = column


class NonNumericValue(ActrecError):
    def __init__(self, row: int, column: str, value: str):
        super().__init__(
            f"non-numeric sensor value {value!r} in column {column!r} at row {row}"
        )
        self.row = row
        self.column = column
        self.value = value


class EmptyFile(ActrecError):
    pass


class InsufficientData(ActrecError):
    pass


class ChannelCountMismatch(ActrecError):
    pass


class SeriesTooShort(ActrecError):
    pass


class WindowTooShort(ActrecError):
    pass


# --- feature extraction --------------------------------------------------

class EmptyInput(ActrecError):
    pass


class LengthMismatch(ActrecError):
    pass


# --- embedding providers -------------------------------------------------

class ProviderUnavailable(ActrecError):
    pass


class AuthMissing(ActrecError):
    pass


class TextTooLong(ActrecError):
    pass


class NoNumericContent(ActrecError):
    pass


class Timeout(ActrecError):
    pass


# --- vector store --------------------------------------------------------

class DuplicateSegment(ActrecError):
    pass


class DimensionMismatch(ActrecError):
    pass


class EmptyIndex(ActrecError):
    pass


class NoCandidates(ActrecError):
    pass


class StoreIoError(ActrecError):
    pass


class CorruptStore(ActrecError):
    pass


class ModeMismatch(ActrecError):
    """Template-mode and descriptor-mode records may not share a store."""


# --- classification ------------------------------------------------------

class EmptyContexts(ActrecError):
    pass


# --- prompt optimizer ----------------------------------------------------

class NotEvaluated(ActrecError):
    pass


class DegenerateGeneration(ActrecError):
    pass


# --- descriptors ---------------------------------------------------------

class ConfigMismatch(ActrecError):
    pass


class MalformedDescriptor(ActrecError):
    pass


# --- open-set protocols --------------------------------------------------

class TooFewClasses(ActrecError):
    pass


class UnknownClass(ActrecError):
    pass


class EmptyLabel(ActrecError):
    pass


# --- evaluation ----------------------------------------------------------

class LabelOutOfSet(ActrecError):
    pass


class ConfigInvalid(ActrecError):
    pass
