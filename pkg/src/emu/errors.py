"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: configuration problems exit 2,
binary-format problems exit 3, numerical divergence exits 4.
"""


class EmuError(Exception):
    """Base class for all package errors."""


class ConfigurationError(EmuError):
    """Invalid configuration value, file, or incompatible option combination."""


class InvalidFieldError(EmuError):
    """A grid field violates its invariants (non-finite values, bad mean, ...)."""


class ShapeError(EmuError):
    """Array shapes incompatible with the requested operation."""


class FormatError(EmuError):
    """A binary artifact has the wrong magic, version, or is truncated."""


class ContractError(EmuError):
    """An API precondition was violated by the caller."""


class DivergenceError(EmuError):
    """Numerical blow-up (NaN/Inf) during integration or training.

    Carries the step index at which divergence was detected.
    """

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step
