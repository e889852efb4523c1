"""Exception types shared across the servoing engine."""


class ServoError(Exception):
    """Base class for all engine errors."""


class NonPositiveDepth(ServoError):
    """A 3D point lies on or behind the camera plane."""


class DegenerateLookAt(ServoError):
    """Look-at eye and target coincide."""


class CameraInPlane(ServoError):
    """Camera sits in the target plane looking along it; rendering undefined."""


class EmptyImage(ServoError):
    """An image with zero pixels was supplied."""


class BridgeUnavailable(ServoError):
    """Feature bridge could not be reached or violated the protocol."""


class CellOutOfBounds(ServoError):
    """Requested grid cell lies outside the descriptor grid."""


class NoEligibleCells(ServoError):
    """Nearest-neighbor query against a grid with no eligible cells."""


class DimensionMismatch(ServoError):
    """Two descriptor grids with incompatible descriptor dimensions."""


class InsufficientMatches(ServoError):
    """Fewer verified correspondences than the controller minimum."""


class DegenerateTrajectory(ServoError):
    """Zero-length executed path compared against a nonzero reference."""


class DegenerateBaseline(ServoError):
    """Initial and desired positions coincide; length ratio undefined."""


class ConfigError(ServoError):
    """Benchmark configuration file is missing keys or has bad values."""
