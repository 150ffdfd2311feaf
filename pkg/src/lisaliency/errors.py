"""Exception hierarchy shared across the package.

Every error the library raises on purpose derives from ``LisaliencyError``,
so callers (and the CLI) can distinguish structured failures from bugs.
"""


class LisaliencyError(Exception):
    """Base class for all structured errors raised by this package."""


class ShapeMismatchError(LisaliencyError, ValueError):
    """Operand dimensions do not agree."""


class NumericsError(LisaliencyError, ArithmeticError):
    """A NaN or Inf was produced; never silently propagated."""


class ConfigError(LisaliencyError, ValueError):
    """Malformed network spec or run configuration."""


class WeightFileError(LisaliencyError, ValueError):
    """Weight file is corrupt, truncated, or inconsistent with its spec."""


class ImageFormatError(LisaliencyError, ValueError):
    """Unsupported or corrupt image file."""


class DatasetError(LisaliencyError, ValueError):
    """Dataset directory or labels file is unusable."""


class TraceError(LisaliencyError, RuntimeError):
    """Activation trace misuse (consumed trace, missing gradients)."""


class TrainingDivergedError(LisaliencyError, RuntimeError):
    """Training loss became non-finite."""
