"""Exception hierarchy shared by every module."""


class RecConvError(Exception):
    """Base class for all library errors."""


class ShapeError(RecConvError, ValueError):
    """Operand shapes are incompatible."""


class InvalidGeometryError(RecConvError, ValueError):
    """A spatial extent is too small (or too large) for the requested operation.

    ``stage`` names the model stage where the failure happened, when known.
    """

    def __init__(self, message, stage=None, minimum=None):
        super().__init__(message)
        self.stage = stage
        self.minimum = minimum


class ConfigError(RecConvError, ValueError):
    """A configuration violates its invariants."""


class ContractError(RecConvError, RuntimeError):
    """An activation trace does not belong to the config/weights it is used with."""
