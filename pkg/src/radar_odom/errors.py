"""Exception hierarchy. Every failure the library reports is a RadarOdomError."""


class RadarOdomError(Exception):
    """Base class for all typed errors raised by radar_odom."""


class DegenerateInputError(RadarOdomError, ValueError):
    pass


# ingest
class DatasetError(RadarOdomError):
    pass


class MissingFileError(DatasetError, FileNotFoundError):
    pass


class DimensionMismatchError(DatasetError, ValueError):
    pass


class NonMonotoneTimestampError(DatasetError, ValueError):
    pass


class InvalidDataError(DatasetError, ValueError):
    """Payload decoded but violates a type invariant (negative/NaN intensity, ...)."""


class ConfigIncompleteError(DatasetError, ValueError):
    pass


# velocity
class DegenerateProjectionError(DegenerateInputError):
    pass


class DegenerateGeometryError(DegenerateInputError):
    pass


class EstimationFailedError(RadarOdomError):
    pass


class InvalidTimestampsError(RadarOdomError, ValueError):
    pass


# preprocess / config
class InvalidParamsError(RadarOdomError, ValueError):
    pass


# registration
class RegistrationError(RadarOdomError):
    pass


class NoTargetsError(RegistrationError):
    pass


class NoMatchesError(RegistrationError):
    pass


class DegenerateWeightsError(RegistrationError):
    pass


class UndefinedRotationError(RegistrationError):
    pass


# odometry / eval
class DatasetTooShortError(RadarOdomError):
    pass


class NoOverlapError(RadarOdomError):
    pass


class DegenerateAlignmentError(RadarOdomError):
    pass
