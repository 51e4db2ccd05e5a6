"""Exception types for the bridge."""


class BridgeError(Exception):
    """Base class for everything raised by this package."""


class LatentFileError(BridgeError):
    """Malformed or truncated latent container bytes."""


class WireError(BridgeError):
    """Malformed frame or response on the modulator stream."""


class ModulatorError(BridgeError):
    """The modulator process failed, rejected a request, or died."""


class ConfigError(BridgeError):
    """Invalid run configuration."""
