class ConfigError(ValueError):
    """Invalid configuration. ``key`` names the offending setting when known."""

    def __init__(self, message, key=None):
        super().__init__(message if key is None else f"{key}: {message}")
        self.key = key


class ContractError(ValueError):
    """An operation was called with arguments outside its domain."""
