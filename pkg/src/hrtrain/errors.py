"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration or parameter value (bad shapes, ranges, arch mismatch)."""


class DataError(ValueError):
    """Malformed input data (IDX/CSV parse failures, out-of-range features)."""


class CapacityError(ValueError):
    """Instance too large for an exhaustive routine (oracle solver)."""


class NumericalError(RuntimeError):
    """Non-finite values encountered during training or solving."""
