"""Exception hierarchy shared by every stage."""


class CocrashError(Exception):
    """Base class for all package errors."""


class ParseError(CocrashError):
    """A malformed input row. ``line`` is the 1-based line number in the file."""

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}: "
        elif where:
            where += " "
        super().__init__(f"{where}{message}")


class DataError(CocrashError):
    """Input that parses but violates a data invariant."""


class EmptyInputError(DataError):
    """An input file or collection with nothing in it."""


class ConfigurationError(CocrashError):
    """Invalid parameters, or inputs too short for the requested analysis."""


class LookupFailure(CocrashError, KeyError):
    """Unknown asset symbol or bucket."""

    def __str__(self):
        return str(self.args[0]) if self.args else ""


class RangeError(CocrashError, ValueError):
    """Crash size outside the observed range."""


class UndefinedCorrelation(CocrashError, ValueError):
    """Rank correlation is undefined because one side is constant."""


class PlanError(CocrashError):
    """Inconsistent simulation plan."""
