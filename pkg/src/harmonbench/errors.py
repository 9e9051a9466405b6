"""Exception hierarchy.

The CLI maps each family to an exit code: configuration problems exit 2,
data problems exit 3, numerical failures exit 4.
"""


class HarmonbenchError(Exception):
    exit_code = 1


class ConfigError(HarmonbenchError, ValueError):
    exit_code = 2


class DataError(HarmonbenchError, ValueError):
    exit_code = 3


class SchemaError(DataError):
    pass


class ParseError(DataError):
    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class ValidationError(DataError):
    pass


class UnknownSiteError(DataError):
    def __init__(self, sites):
        self.sites = sorted(str(s) for s in sites)
        super().__init__(f"unknown site(s): {', '.join(self.sites)}")


class NumericalError(HarmonbenchError, ArithmeticError):
    exit_code = 4


class ConvergenceError(NumericalError):
    def __init__(self, message, last_change=None):
        super().__init__(message)
        self.last_change = last_change
