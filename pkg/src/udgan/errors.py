class ConfigError(ValueError):
    """Invalid configuration value or combination."""


class DataError(ValueError):
    """Dataset on disk is missing, malformed or inconsistent."""


class TrainingError(RuntimeError):
    """A training run cannot continue (non-finite parameters, missing checkpoint...)."""
