from motion.errors import DataError


class ShapeError(ValueError):
    """Array shapes do not agree with an operation or a model spec."""


class NumericalError(FloatingPointError):
    """Non-finite values appeared in a computation.

    `diagnostics` carries whatever state the raiser collected for the dump.
    """

    def __init__(self, message: str, diagnostics: dict = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ContainerError(DataError):
    """A parameter container is corrupted or has an unsupported version."""
