"""Position-based, learning-driven resource allocation for a TDD cloud-RAN downlink."""

from cransim.errors import ConfigError, ContractError

__version__ = "0.1.0"

__all__ = ["ConfigError", "ContractError", "__version__"]
