"""Exception hierarchy shared by all models and the CLI.

InputError covers everything a user can fix by changing inputs or config
(CLI exit code 2); NumericalError covers failures of the numerical
machinery itself, e.g. non-convergence or singular ratios (exit code 3).
"""


class EpiFamilyError(Exception):
    """Base class for all errors raised by this package."""


class InputError(EpiFamilyError):
    """Invalid input data or configuration."""


class AlignmentError(InputError):
    """Two daily series do not line up on the calendar."""


class NumericalError(EpiFamilyError):
    """A numerical procedure failed (non-convergence, singularity, ...)."""


class UndefinedDistributionError(NumericalError):
    """A requested distribution has no mass to normalize."""
