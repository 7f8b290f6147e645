"""
groundmotion error hierarchy
============================
Every failure the library raises on purpose derives from GroundMotionError.
main() maps each family to a process exit code.
"""

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_INTERRUPTED = 130


class GroundMotionError(Exception):
    """Base class for all groundmotion errors."""
    exit_code = EXIT_UNEXPECTED


class ConfigError(GroundMotionError):
    """Invalid configuration value, unknown key or unknown generator kind."""
    exit_code = EXIT_CONFIG


class DimensionError(GroundMotionError, ValueError):
    """Array or vector with the wrong length / joint count."""
    exit_code = EXIT_CONFIG


class DegeneratePlaneError(GroundMotionError, ValueError):
    """Plane parameters whose normal part is (numerically) zero."""
    exit_code = EXIT_NUMERIC


class ProjectionError(GroundMotionError):
    """A joint lies at or behind the camera plane."""
    exit_code = EXIT_CONFIG

    def __init__(self, frame, depth):
        super().__init__(f"Non-positive camera depth {depth:.4f} at frame {frame}.")
        self.frame = frame
        self.depth = depth


class SequenceFormatError(GroundMotionError):
    """Sequence file is not a groundmotion container."""
    exit_code = EXIT_CONFIG


class TruncatedFileError(SequenceFormatError):
    """Sequence file ends early or misses required arrays."""


class SequenceVersionError(SequenceFormatError):
    """Sequence file was written by an unsupported format version."""


class CheckpointError(GroundMotionError):
    """Checkpoint file is unreadable or not a groundmotion checkpoint."""
    exit_code = EXIT_CONFIG


class CheckpointConfigError(CheckpointError):
    """Checkpoint was trained with a different ModelConfig."""


class NumericError(GroundMotionError, FloatingPointError):
    """A loss term became NaN or infinite."""
    exit_code = EXIT_NUMERIC

    def __init__(self, term, message=None):
        super().__init__(message or f"Loss term '{term}' is not finite.")
        self.term = term


class RolloutDivergenceError(NumericError):
    """Autoregressive rollout produced a non-finite state."""

    def __init__(self, step):
        super().__init__("rollout", f"Rollout diverged at step {step}.")
        self.step = step


class FitDivergenceError(NumericError):
    """Latent optimization hit a non-finite objective.

    Carries the last finite iterate and the report collected so far.
    """

    def __init__(self, message, variables=None, report=None):
        super().__init__("objective", message)
        self.variables = variables
        self.report = report


def exit_code_for(exc):
    """Exit code for an exception raised while running a command."""
    if isinstance(exc, KeyboardInterrupt):
        return EXIT_INTERRUPTED
    return getattr(exc, "exit_code", EXIT_UNEXPECTED)
