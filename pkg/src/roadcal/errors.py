"""Exception hierarchy for the calibration toolkit.

Errors that map to CLI exit codes carry an ``exit_code`` attribute;
everything else exits with the generic failure code 1.
"""


class CalibrationError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 1


class InputError(CalibrationError):
    """Malformed or inconsistent input data (files, configs, timestamps)."""

    exit_code = 3


class BehindCameraError(CalibrationError):
    """A point or ray intersection lies at non-positive camera depth."""


class NoIntersectionError(CalibrationError):
    """A viewing ray is parallel to the target plane."""


class InsufficientDataError(CalibrationError):
    """Too few data points for the requested estimation."""


class DegenerateGeometryError(CalibrationError):
    """Input geometry is rank-deficient (collinear points, flat spread)."""


class NoConsensusError(CalibrationError):
    """Robust estimation found no model with enough inlier support."""

    exit_code = 4


class NoOverlapError(CalibrationError):
    """Image track and localization log share no usable time span."""


class NoRefinablePairsError(CalibrationError):
    """Every candidate correspondence was dropped during refinement."""


class InsufficientTraversalsError(CalibrationError):
    """Fewer than two consistent calibration-vehicle passes were found."""

    exit_code = 2


class GenerationError(CalibrationError):
    """A synthetic scenario produced no usable observations."""
