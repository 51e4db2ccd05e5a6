"""Bridge between a toy latent-diffusion pipeline and an external
frequency modulator process."""

from .errors import (
    BridgeError,
    ConfigError,
    LatentFileError,
    ModulatorError,
    WireError,
)
from .modulator import DEFAULT_COMMAND, IdentityModulator, SubprocessModulator
from .runner import (
    BridgeConfig,
    directional_report,
    run_inversion_edit,
    run_paired_generation,
)

__all__ = [
    "BridgeError",
    "BridgeConfig",
    "ConfigError",
    "DEFAULT_COMMAND",
    "IdentityModulator",
    "LatentFileError",
    "ModulatorError",
    "SubprocessModulator",
    "WireError",
    "directional_report",
    "run_inversion_edit",
    "run_paired_generation",
]
