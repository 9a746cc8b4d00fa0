"""Exception hierarchy. ``exit_code`` is what the CLI returns for each family."""


class EscGcnError(Exception):
    exit_code = 1


class UsageError(EscGcnError):
    exit_code = 1


class ConfigError(UsageError):
    pass


class DimensionError(EscGcnError, ValueError):
    exit_code = 3


class PoolingDomainError(DimensionError):
    pass


class DataError(EscGcnError):
    exit_code = 2


class ParseError(DataError):
    def __init__(self, message: str, path: str | None = None, line: int | None = None, column: int | None = None):
        self.path = path
        self.line = line
        self.column = column
        loc = ":".join(str(p) for p in (path, line, column) if p is not None)
        super().__init__(f"{loc}: {message}" if loc else message)


class FormatError(ParseError):
    pass


class NumericalError(EscGcnError):
    exit_code = 3
