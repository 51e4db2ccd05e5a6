"""Frequency-domain laboratory for controllable diffusion generation.

An analytic, fully Gaussian diffusion testbed (power-law spectral priors,
closed-form optimal denoising, deterministic sampling) plus per-step
frequency modulation between paired trajectories, similarity metrics, and a
reproducible experiment harness with a binary latent-exchange protocol.
"""

from .diffusion import (
    ConditionSpec,
    NoiseSchedule,
    PowerLawPrior,
    SnrEstimate,
    StepSnapshot,
    TrajectoryRecord,
    build_schedule,
    ddim_step,
    empirical_snr,
    forward_diffuse,
    generation_timesteps,
    make_condition,
    sample,
    synthesize_prior_sample,
    theoretical_snr,
    wiener_denoise,
)
from .errors import (
    ConfigError,
    FieldTooSmallError,
    FreqmodError,
    HookContractError,
    InsufficientDataError,
    InvalidDimensionError,
    InvalidInputError,
    InvalidScheduleError,
    InvalidStepOrderError,
    InvalidTimestepError,
    LatentFormatError,
    OracleSizeError,
    SymmetryViolationError,
    TruncatedFrameError,
    UndefinedSnrError,
)
from .latentio import decode_latent, encode_latent, read_latent, write_latent
from .metrics import (
    MetricReport,
    band_distance,
    compute_report,
    ms_ssim,
    psnr,
    ssim,
)
from .modulation import (
    FilterSpec,
    WeightField,
    WeightParams,
    decay_factor,
    filter_hook,
    fuse_spectra,
    high_pass_intervention,
    modulate,
    modulated_trajectory,
    paired_sample,
    weight_field,
)
from .spectral import (
    ComplexSpectrum,
    PsdProfile,
    RadialMap,
    RealField,
    brute_force_dft,
    forward_transform,
    inverse_transform,
    psd_slope,
    radial_distance_map,
    radially_averaged_psd,
)

__version__ = "0.1.0"
