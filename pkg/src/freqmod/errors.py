"""Exception types shared across the package.

Every error raised on a declared failure path derives from FreqmodError so
callers (CLI, protocol server) can separate contract violations from bugs.
"""


class FreqmodError(Exception):
    """Base class for all package-level errors."""


class InvalidInputError(FreqmodError, ValueError):
    """Input violates a documented precondition (shape, finiteness, range)."""


class InvalidDimensionError(InvalidInputError):
    """Grid dimensions below the supported minimum."""


class SymmetryViolationError(FreqmodError, ValueError):
    """Spectrum fed to the inverse transform is not conjugate-symmetric."""


class InsufficientDataError(FreqmodError, ValueError):
    """Not enough usable bins/samples for the requested estimate."""


class OracleSizeError(InvalidInputError):
    """Direct-summation reference transform asked for a grid beyond its cap."""


class InvalidScheduleError(InvalidInputError):
    """Noise schedule construction produced values outside its invariants."""


class InvalidTimestepError(InvalidInputError):
    """Timestep outside the schedule's valid range for the operation."""


class UndefinedSnrError(InvalidTimestepError):
    """SNR requested at t=0 where the noise term vanishes."""


class InvalidStepOrderError(InvalidInputError):
    """Sampler update asked to move forward in diffusion time."""


class HookContractError(FreqmodError, TypeError):
    """A per-step hook returned something other than a same-shape field."""


class FieldTooSmallError(InvalidInputError):
    """Field too small for a windowed metric at the requested scale count."""


class ConfigError(FreqmodError, ValueError):
    """Run configuration failed validation (unknown keys, bad values)."""


class LatentFormatError(FreqmodError, ValueError):
    """Latent container bytes violate the declared binary layout."""


class TruncatedFrameError(FreqmodError, IOError):
    """Protocol stream ended in the middle of a frame."""
