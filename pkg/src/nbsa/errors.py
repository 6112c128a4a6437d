class DimensionError(ValueError):
    """Operand shapes do not agree."""


class ConfigurationError(ValueError):
    """A configuration (kernel size, block tiling, label range, ...) is invalid."""


class UndefinedMetricError(ValueError):
    """A metric is undefined for the given operands (e.g. empty masks)."""
