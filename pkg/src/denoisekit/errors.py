"""Exception taxonomy shared across the toolkit."""


class DenoiseKitError(Exception):
    """Base class for all toolkit errors."""


class ParseError(DenoiseKitError):
    """Malformed input file (bad RIFF header, truncated chunk, ...)."""


class UnsupportedFormatError(DenoiseKitError):
    """File is well-formed but uses an encoding we do not handle."""


class ConfigError(DenoiseKitError):
    """Invalid or inconsistent configuration."""


class ShapeError(DenoiseKitError):
    """Array shapes incompatible with the requested operation."""


class ContractError(DenoiseKitError):
    """Operation precondition violated by the caller."""


class DegenerateInputError(DenoiseKitError):
    """Input is technically valid but degenerate (e.g. zero RMS)."""


class CalibrationError(DenoiseKitError):
    """Layer-weight calibration failed (degenerate feature layer)."""


class TrainingError(DenoiseKitError):
    """Training diverged or produced non-finite values."""


class CheckpointFormatError(DenoiseKitError):
    """Checkpoint file has a bad magic, version, or layout."""


class ManifestValidationError(DenoiseKitError):
    """Listening-test experiment manifest violates an invariant."""
