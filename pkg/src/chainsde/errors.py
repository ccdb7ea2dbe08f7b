"""Package exception types."""


class ChainSDEError(Exception):
    """Base class for errors raised by chainsde."""


class ConfigError(ChainSDEError):
    """An experiment or solver configuration is inconsistent or malformed."""


class ResourceLimitError(ChainSDEError):
    """A request would exceed a documented memory or size budget."""
