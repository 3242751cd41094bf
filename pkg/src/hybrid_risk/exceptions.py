"""Exception hierarchy shared by every module of the package."""


class HybridRiskError(Exception):
    """Base class for all package errors."""


class DimensionError(HybridRiskError, ValueError):
    """Operand shapes are incompatible."""


class ConfigurationError(HybridRiskError, ValueError):
    """A configuration (model, layer or run) is internally inconsistent."""


class UsageError(HybridRiskError, ValueError):
    """A function was called outside its contract."""


class DataFormatError(HybridRiskError, ValueError):
    """Malformed input file. Carries the offending line and column when known."""

    def __init__(self, message, row=None, column=None):
        self.row = row
        self.column = column
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class NonFiniteLossError(HybridRiskError, RuntimeError):
    """Training produced a NaN or infinite loss."""

    def __init__(self, message, parameter=None):
        self.parameter = parameter
        super().__init__(message)
