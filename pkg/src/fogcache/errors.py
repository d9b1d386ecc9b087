"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Raised when a configuration file or mapping is invalid (CLI exit code 2)."""


class NumericalError(RuntimeError):
    """Raised when learning state turns non-finite (CLI exit code 3).

    This is a hard failure by design: a NaN or infinity in an agent's
    memory signals a bug or a divergent configuration and must never be
    clamped silently.
    """
