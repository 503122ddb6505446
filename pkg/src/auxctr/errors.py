"""Exception hierarchy shared across the package."""


class AuxCtrError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(AuxCtrError, ValueError):
    pass


class DimensionError(AuxCtrError, ValueError):
    pass


class DegenerateRowError(AuxCtrError, ValueError):
    pass


class SequenceTooShortError(AuxCtrError, ValueError):
    pass


class OutOfVocabularyError(AuxCtrError, IndexError):
    def __init__(self, field: str, index: int, cardinality: int):
        super().__init__(f"index {index} out of vocabulary for field {field!r} (cardinality {cardinality})")
        self.field = field
        self.index = index
        self.cardinality = cardinality


class SchemaError(AuxCtrError, ValueError):
    pass


class ParseError(AuxCtrError, ValueError):
    def __init__(self, message: str, line_no: int | None = None):
        prefix = f"line {line_no}: " if line_no is not None else ""
        super().__init__(prefix + message)
        self.line_no = line_no


class LabelError(AuxCtrError, ValueError):
    pass


class UsageError(AuxCtrError, RuntimeError):
    pass


class NumericError(AuxCtrError, ArithmeticError):
    pass


class CorruptCheckpointError(AuxCtrError, ValueError):
    pass


class UndefinedMetricError(AuxCtrError, ValueError):
    pass
