"""Layout-preserving scenario augmentation with prototype-guided diffusion.

The pipeline runs in two stages against a pluggable denoiser backend:
extraction first captures attention features along a DDIM inversion and
restricts their principal components to layout-weighted object regions;
generation then re-samples under a scenario prompt while aligning live
features and latents to those stored targets.
"""

from .sampler import GuidanceConfig, LatentTrajectory, SampleResult, guided_epsilon, invert, sample
from .schedule import NoiseSchedule, build_schedule, ddim_step, ddim_update

__version__ = "0.1.0"

__all__ = [
    "GuidanceConfig",
    "LatentTrajectory",
    "SampleResult",
    "guided_epsilon",
    "invert",
    "sample",
    "NoiseSchedule",
    "build_schedule",
    "ddim_step",
    "ddim_update",
    "__version__",
]
