"""Exception types shared across the package."""


class DeskewError(Exception):
    """Base class for every error raised by this package."""


class InvalidArgument(DeskewError, ValueError):
    pass


class OutOfRange(DeskewError, ValueError):
    pass


class DegenerateGeometry(DeskewError, ValueError):
    pass


class MissingPose(DeskewError, LookupError):
    pass


class InsufficientInliers(DeskewError, RuntimeError):
    pass


class UnobservableVelocity(DeskewError, RuntimeError):
    pass


class IllConditioned(DeskewError, RuntimeError):
    def __init__(self, message, null_direction=None):
        super().__init__(message)
        self.null_direction = null_direction


class EmptyInput(DeskewError, ValueError):
    pass


class MisalignedInput(DeskewError, ValueError):
    pass


class InvalidMeasurement(DeskewError, ValueError):
    pass


class ConfigError(DeskewError, ValueError):
    pass


class DataError(DeskewError, IOError):
    pass


class PairingError(DataError):
    pass


class SchemaError(DataError):
    pass
