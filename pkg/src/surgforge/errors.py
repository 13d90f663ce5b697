"""Exception taxonomy shared across the engine.

Every error carries an ``exit_code`` so the CLI can map failure classes to
distinct process exit statuses:

    2  configuration errors (bad config file, bad flag combination)
    3  input errors (missing/malformed user-supplied data)
    4  backend errors (transport, timeout, refusal, schema violations)
    5  invariant errors (internal contract broken mid-pipeline)
"""

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INPUT = 3
EXIT_BACKEND = 4
EXIT_INVARIANT = 5


class SurgForgeError(Exception):
    """Base class for all engine errors."""

    exit_code = EXIT_INVARIANT


class ConfigError(SurgForgeError):
    exit_code = EXIT_CONFIG


class InputError(SurgForgeError):
    exit_code = EXIT_INPUT


class InvariantError(SurgForgeError):
    exit_code = EXIT_INVARIANT


# --- backend / protocol -----------------------------------------------------


class BackendFailure(SurgForgeError):
    """A model service could not produce a usable answer."""

    exit_code = EXIT_BACKEND


class TransportError(BackendFailure):
    """Connection-level failure (retryable)."""


class RequestTimeout(BackendFailure):
    """The backend did not answer in time (retryable)."""


class BackendRefusal(BackendFailure):
    """The backend answered with status=error (not retryable)."""


class SchemaViolation(SurgForgeError):
    """A protocol message does not match its declared schema (not retryable)."""

    exit_code = EXIT_BACKEND


# --- transcript -------------------------------------------------------------


class EmptyTranscription(InputError):
    """The ASR output contains no sentences; the video is discarded."""


class MalformedTimestamps(InputError):
    """Word timing cannot be repaired within the overlap tolerance."""


# --- hierarchy --------------------------------------------------------------


class UnparseableProposal(BackendFailure):
    """Segmenter output violates the response schema."""


class EmptyLevel(InvariantError):
    """A granularity level has no surviving segments after repair."""


# --- filtering --------------------------------------------------------------


class DegenerateClip(InvariantError):
    """Clip span too short to sample even one frame."""


class ZeroVector(InvariantError):
    """An embedding average collapsed to (numerically) zero."""


class DimensionMismatch(InvariantError):
    """Vectors of different dimensionality were combined."""


class MissingChildLabel(InvariantError):
    """Label propagation found a task segment without a visual label."""


class UnparseableVerdict(BackendFailure):
    """Descriptiveness judge returned something outside the two labels."""


# --- dataset ----------------------------------------------------------------


class KeyMismatch(InvariantError):
    """Manifest assembly found a pair without a matching verdict."""


class EmptyManifest(InputError):
    """Stats requested over a manifest with no records."""


# --- contrastive ------------------------------------------------------------


class InsufficientPairs(InputError):
    """Batch size exceeds the number of available pairs."""


class NonFinite(InvariantError):
    """A numeric input or result contains NaN or infinity."""


class Divergence(SurgForgeError):
    """An optimizer produced a non-finite loss."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


# --- evaluation -------------------------------------------------------------


class EmptyTrack(InputError):
    """A frame-feature track has no frames."""


class LengthMismatch(InputError):
    """Prediction and ground-truth sequences differ in length."""


class NoPositives(InputError):
    """Average precision requested but no class has a positive label."""
