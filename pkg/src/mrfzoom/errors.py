"""Exception types raised across the package."""


class MRFError(Exception):
    """Base class for all package errors."""


class DegenerateSignalError(MRFError, ValueError):
    """A fingerprint with zero energy where a nonzero one is required."""


class DegeneratePulseError(MRFError, ValueError):
    """Full-form RF rotation requested for a zero flip angle."""


class LengthMismatchError(MRFError, ValueError):
    pass


class DictionaryFormatError(MRFError, ValueError):
    """Malformed, truncated or foreign dictionary / CC-map file."""


class DigestMismatchError(DictionaryFormatError):
    """Dictionary was generated from a different schedule."""


class CalibrationError(MRFError, RuntimeError):
    """Noise calibration could not reach the requested auto-correlation."""
