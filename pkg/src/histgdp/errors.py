"""Exception hierarchy shared by all modules.

Each class maps to a process exit code so the command line layer can
translate failures uniformly: validation problems exit 1, numerical
failures exit 2, file problems exit 3.
"""


class HistGdpError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class ValidationError(HistGdpError):
    """Bad inputs, violated preconditions, or inconsistent data."""

    exit_code = 1


class NumericalError(HistGdpError):
    """An iterative routine failed to converge or produced non-finite values."""

    exit_code = 2


class InputError(HistGdpError):
    """Missing or unreadable files, malformed headers."""

    exit_code = 3
