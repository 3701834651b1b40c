"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Array dimensions are inconsistent with the requested operation."""


class ConfigError(ValueError):
    """A configuration value is out of its allowed domain."""


class FormatError(ValueError):
    """A binary container (IDX file, checkpoint) is malformed."""
