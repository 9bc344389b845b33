"""Exception types shared across the package."""


class CffairError(Exception):
    """Base class for every error raised deliberately by this package."""


class SchemaError(CffairError):
    pass


class IngestionError(CffairError):
    def __init__(self, message, row=None):
        super().__init__(message if row is None else f"row {row}: {message}")
        self.row = row


class CycleError(CffairError, ValueError):
    def __init__(self, cycle):
        path = " -> ".join(str(n) for n in [*cycle, cycle[0]])
        super().__init__(f"graph contains a cycle: {path}")
        self.cycle = list(cycle)


class DimensionError(CffairError, ValueError):
    pass


class ConfigError(CffairError):
    pass


class NumericalError(CffairError, FloatingPointError):
    def __init__(self, message, index=None):
        super().__init__(message if index is None else f"{message} (batch row {index})")
        self.index = index


class DivergenceError(CffairError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report
