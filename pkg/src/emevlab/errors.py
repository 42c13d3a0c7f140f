"""Exception hierarchy shared by every emevlab module.

The CLI maps these onto process exit codes (see ``emevlab.cli``).
"""


class EmevError(Exception):
    """Base class for all library errors."""


class DimensionError(EmevError, ValueError):
    """Operand shapes are inconsistent."""


class ConfigurationError(EmevError, ValueError):
    """Invalid layer, model, optimizer or run configuration."""


class UsageError(EmevError, RuntimeError):
    """API used out of order, e.g. backward() on a detached tensor."""


class OutOfModelError(EmevError, ValueError):
    """Input lies outside the validity range of an analytic model."""


class FormatError(EmevError, ValueError):
    """Dataset/checkpoint/config file is malformed."""


class NumericalError(EmevError, ArithmeticError):
    """Iteration failed to converge or a value became non-finite.

    ``where`` carries the context (RB index, epoch number, ...).
    """

    def __init__(self, message, where=None):
        super().__init__(message)
        self.where = where


class OverheadMismatchError(EmevError, ValueError):
    """Models compared at different feedback overheads (codeword lengths)."""
