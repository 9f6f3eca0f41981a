"""Exception types shared across the toolkit."""


class SubtrainError(Exception):
    """Base class for all toolkit errors."""


class ShapeError(SubtrainError):
    """Array shapes or lengths do not match the expected layout."""


class LabelError(SubtrainError):
    """A class label lies outside [0, num_classes)."""


class FormatError(SubtrainError):
    """A binary file is malformed (bad magic, truncation, inconsistent counts)."""


class IoError(SubtrainError):
    """An underlying file operation failed."""


class ConfigError(SubtrainError):
    """A configuration file is missing, malformed, or has a bad key/value."""


class DegenerateTrajectory(SubtrainError):
    """The sampled trajectory carries no usable variance (t < 2 or all points equal)."""


class DimensionError(SubtrainError):
    """Requested subspace dimension is incompatible with the trajectory."""


class SkipUpdate(SubtrainError):
    """Curvature condition failed; the caller must keep its current inverse-Hessian."""


class LineSearchFailed(SubtrainError):
    """Backtracking exhausted its budget without satisfying sufficient decrease."""


class NumericalFailure(SubtrainError):
    """A run-level numerical invariant was violated (e.g. subspace confinement)."""
