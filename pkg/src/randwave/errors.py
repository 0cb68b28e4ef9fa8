"""Exception types shared across the package."""


class RandwaveError(Exception):
    """Base class for package errors."""


class ConfigError(RandwaveError, ValueError):
    """Invalid configuration value or unknown key."""


class GridError(RandwaveError, ValueError):
    """A grid is too coarse for the requested operation."""


class ResourceLimitError(RandwaveError):
    """A request exceeds a configured size cap."""


class LayerError(RandwaveError, ValueError):
    """A randomization layer was requested without the data it needs."""


class BlowUpError(RandwaveError, FloatingPointError):
    """A time integration produced non-finite values."""
