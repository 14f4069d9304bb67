"""Exception hierarchy shared by every pipeline stage."""


class CausalCRMError(Exception):
    """Base class for all errors raised by this package."""


class SchemaError(CausalCRMError, ValueError):
    """A column is missing, duplicated or declared inconsistently."""


class ParseError(CausalCRMError, ValueError):
    """A cell could not be parsed according to its column kind."""

    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class KindError(SchemaError):
    """An operation was applied to a column of the wrong kind."""


class DegenerateDataError(CausalCRMError, ValueError):
    """The data cannot support the requested fit (e.g. a single class)."""


class ConvergenceError(CausalCRMError, RuntimeError):
    """The structure learner did not reach the acyclicity tolerance."""

    def __init__(self, message, h_value=None):
        super().__init__(message)
        self.h_value = h_value


class CounterfactualExhaustedError(CausalCRMError, RuntimeError):
    """The search budget ran out before k valid counterfactuals were found."""

    def __init__(self, message, best_invalid=None, found=()):
        super().__init__(message)
        self.best_invalid = best_invalid
        self.found = tuple(found)
