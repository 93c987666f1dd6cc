"""Exception types shared across the pipeline."""


class ThermoFaceError(Exception):
    """Base class for all library errors."""


class ConstantImageError(ThermoFaceError):
    """An operation needed intensity variation and the image had none."""


class EmptyMaskError(ThermoFaceError):
    """A segmentation mask had too few foreground pixels to work with."""


class DegenerateShapeError(ThermoFaceError):
    """A landmark set or mesh triangle collapsed to a point or a line."""


class ModelFormatError(ThermoFaceError):
    """A model file could not be read or has an unsupported version."""


class FitError(ThermoFaceError):
    """ICAAM fitting could not start or its normal equations are singular."""


class ZeroVarianceError(ThermoFaceError):
    """A constant signature was passed to the correlation measure."""


class GalleryError(ThermoFaceError):
    """Enrollment conflict or gallery/config mismatch."""


class StageError(ThermoFaceError):
    """Wraps an error raised by one pipeline stage, keeping the stage name."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause
