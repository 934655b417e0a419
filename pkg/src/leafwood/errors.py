"""Exception hierarchy shared by the library and the command line."""


class LeafWoodError(Exception):
    """Base class for all errors raised by leafwood."""


class ConfigError(LeafWoodError, ValueError):
    """Invalid parameters or run configuration."""


class ParseError(LeafWoodError, ValueError):
    """A point-cloud, label or model file could not be parsed."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)


class EmptyInputError(ParseError):
    """The input file holds no data records."""


class UnsupportedFormatError(ParseError):
    """The file uses a format variant this package does not read."""


class NumericalError(LeafWoodError, ArithmeticError):
    """A numerical stage could not produce a valid result."""


class ConvergenceError(NumericalError):
    """SMO hit its iteration cap before satisfying the KKT tolerance.

    ``diagnostics`` holds the best-so-far state (iterations, KKT gap, dual
    objective) so callers can decide whether to retry with other settings.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class SingleClassError(NumericalError):
    """A training set lacks one of the two classes."""
