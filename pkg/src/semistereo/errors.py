"""Exception types shared across the package."""


class SemiStereoError(Exception):
    """Base class for all package errors."""


class ImageFormatError(SemiStereoError):
    """Raster file is malformed or uses an unsupported encoding."""


class CalibError(SemiStereoError):
    """Calibration metadata is missing or inconsistent."""


class DatasetError(SemiStereoError):
    """A dataset directory cannot be loaded."""


class ParameterError(SemiStereoError, ValueError):
    """An argument violates a documented precondition."""


class ShapeError(SemiStereoError, ValueError):
    """Tensor shapes are inconsistent with the requested operation."""


class WeightFormatError(SemiStereoError):
    """Weight file is malformed or truncated."""


class IncompatibleArchitectureError(SemiStereoError):
    """Network weights do not match the expected architecture fingerprint."""


class TrainingError(SemiStereoError):
    """Training cannot proceed (e.g. empty sample set)."""


class SamplingError(SemiStereoError):
    """No eligible pixels available for patch sampling."""


class UndefinedMetricError(SemiStereoError):
    """A metric has no evaluable pixels."""


class ConfigError(SemiStereoError):
    """Pipeline configuration is unusable."""
