class ConfigError(ValueError):
    """Invalid configuration: unknown model, bad key, out-of-range setting."""


class SamplingError(RuntimeError):
    """A sample could not be drawn as requested (e.g. a stratum is too small)."""

    def __init__(self, message, stratum_sizes=None, allocation=None):
        super().__init__(message)
        self.stratum_sizes = stratum_sizes
        self.allocation = allocation


class EstimationError(RuntimeError):
    """Model fitting or variance estimation failed."""

    def __init__(self, message, columns=None):
        super().__init__(message)
        self.columns = list(columns) if columns is not None else []


class InvariantViolation(ArithmeticError):
    """A quantity required to be strictly positive (e.g. the scale function) was not."""


class SimulationError(RuntimeError):
    """Too many Monte Carlo replicates failed."""

    def __init__(self, message, failures=None):
        super().__init__(message)
        self.failures = failures or []
