"""Exception types raised across the package."""


class DMKDError(Exception):
    pass


class ShapeMismatch(DMKDError, ValueError):
    pass


class BadAxis(DMKDError, ValueError):
    pass


class NotScalar(DMKDError, ValueError):
    pass


class MissingGrad(DMKDError, RuntimeError):
    pass


class NonPositiveTemperature(DMKDError, ValueError):
    pass


class ThresholdOutOfRange(DMKDError, ValueError):
    pass


class NonBinaryInput(DMKDError, ValueError):
    pass


class CheckpointInvalid(DMKDError, ValueError):
    pass


class GradcheckFailure(DMKDError, AssertionError):
    pass
