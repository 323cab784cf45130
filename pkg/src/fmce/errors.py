"""Exception types shared across the package."""


class FmceError(Exception):
    """Base class for every error raised by this package."""


class LossLogError(FmceError, ValueError):
    """A loss log is malformed or holds values that cannot be analysed."""


class NotConvergedError(FmceError):
    """The convergence indicator never dropped to the threshold."""


class DegenerateCurveError(FmceError):
    """The log-loss curve has no drop between baseline and convergence."""


class InfeasibleSegmentationError(FmceError):
    """Strictly increasing epoch markers cannot be placed before convergence."""

    def __init__(self, message, phase=None):
        super().__init__(message)
        self.phase = phase


class ShapeError(FmceError, ValueError):
    pass


class FormatError(FmceError):
    """Binary file with bad magic, unknown version, truncation or bad checksum."""


class DivergenceError(FmceError):
    pass


class MissingCheckpointError(FmceError):
    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch
