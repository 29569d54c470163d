"""Exception hierarchy shared by the toolkit.

The CLI maps these onto exit codes: ValidationError -> 2, FormatError -> 3.
"""


class MultiflowError(Exception):
    pass


class ValidationError(MultiflowError):
    """A semantic precondition or invariant was violated."""


class FormatError(MultiflowError):
    """A file could not be read or written in the expected layout."""
