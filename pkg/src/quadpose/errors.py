"""Shared exception types."""


class QuadposeError(Exception):
    """Base class for all package errors."""


class OutOfRangeError(QuadposeError):
    """A coordinate or value fell outside its documented bounds."""


class SchemaMismatchError(QuadposeError):
    """A pose or file does not match the expected skeleton schema."""


class ConfigurationError(QuadposeError):
    """Invalid configuration value (empty range, bad coefficient, ...)."""


class DegenerateDepthError(QuadposeError):
    """A joint ended up behind or too close to the camera."""


class InsufficientBatchError(QuadposeError):
    """An operation required a larger batch than was provided."""


class DivergedTrainingError(QuadposeError):
    """Training produced a non-finite loss.

    Carries the per-term loss breakdown at the failing step.
    """

    def __init__(self, message, breakdown=None):
        super().__init__(message)
        self.breakdown = dict(breakdown or {})


class AlignmentError(QuadposeError):
    """Procrustes alignment is undefined (degenerate reference pose)."""


class CheckpointError(QuadposeError):
    """Checkpoint could not be written, read, or does not match the topology."""
