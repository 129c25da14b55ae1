"""Deterministic DDIM inversion and guided sampling loops."""

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import torch

from .backends.base import Condition, DenoiserBackend
from .errors import ContractError, ParameterError
from .schedule import NoiseSchedule, ddim_update


@dataclass
class GuidanceConfig:
    """Hyper-parameter surface of the guided sampler.

    ``s`` is the classifier-free guidance strength, ``sigma`` the peak-function
    width, ``tau`` the mask threshold, ``n_t`` the DDIM step count and ``n_p``
    the number of low-noise steps that receive guidance (defaults to
    ceil(0.6 * n_t)). ``w_sa``/``w_sl`` weight the two alignment-loss
    gradients inside the epsilon update.
    """

    s: float = 7.5
    sigma: float = 0.1
    tau: float = 0.3
    n_t: int = 200
    n_p: Optional[int] = None
    w_sa: float = 1.0
    w_sl: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_p is None:
            self.n_p = math.ceil(0.6 * self.n_t)
        if self.s < 0 or self.w_sa < 0 or self.w_sl < 0:
            raise ParameterError("s, w_sa and w_sl must be nonnegative")
        if not 0.0 < self.sigma < 1.0:
            raise ParameterError(f"sigma={self.sigma} must lie in (0, 1)")
        if not 0.0 <= self.tau < 1.0:
            raise ParameterError(f"tau={self.tau} must lie in [0, 1)")
        if self.n_t < 1:
            raise ParameterError("n_t must be positive")
        if not 0 <= self.n_p <= self.n_t:
            raise ParameterError(f"n_p={self.n_p} must lie in 0..n_t={self.n_t}")


@dataclass
class LatentTrajectory:
    """Inversion trajectory: latents[k] is the state after k forward steps."""

    latents: list
    features: dict = field(default_factory=dict)  # step k -> FeatureRecord

    @property
    def n_t(self) -> int:
        return len(self.latents) - 1


def _refine_tolerance(z: torch.Tensor) -> float:
    return 1e-10 if z.dtype == torch.float64 else 1e-6


@torch.no_grad()
def invert(
    image: torch.Tensor,
    cond: Optional[Condition],
    schedule: NoiseSchedule,
    backend: DenoiserBackend,
    n_capture: int = 0,
    refine_max_iters: int = 50,
    refine_tol: Optional[float] = None,
) -> LatentTrajectory:
    """Map a clean latent to the noise endpoint along the DDIM grid.

    Each forward step is solved by fixed-point iteration so that the reverse
    (sampling) step is its exact functional inverse; ``refine_max_iters=0``
    falls back to the plain single-evaluation forward rule. Feature records
    are captured at the arrived latents of steps 1..n_capture, the states the
    sampling loop will revisit.
    """
    if n_capture > schedule.ddim_steps:
        raise ParameterError("n_capture cannot exceed the DDIM step count")
    tol = _refine_tolerance(image) if refine_tol is None else refine_tol
    z = image.clone()
    trajectory = LatentTrajectory(latents=[z.clone()])
    for k in range(1, schedule.ddim_steps + 1):
        t_k = schedule.timestep(k)
        a_lo = schedule.alpha_bar_at(k - 1)
        a_hi = schedule.alpha_bar_at(k)
        eps = backend.predict_noise(z, t_k, cond)
        z_next = ddim_update(z, eps, a_lo, a_hi)
        for _ in range(refine_max_iters):
            eps = backend.predict_noise(z_next, t_k, cond)
            z_new = ddim_update(z, eps, a_lo, a_hi)
            delta = torch.linalg.vector_norm(z_new - z_next)
            scale = torch.linalg.vector_norm(z_new)
            z_next = z_new
            if float(delta) <= tol * max(float(scale), 1e-30):
                break
        z = z_next
        trajectory.latents.append(z.clone())
        if k <= n_capture:
            trajectory.features[k] = backend.capture_features(z, t_k, cond)
    return trajectory


def guided_epsilon(
    eps_text: torch.Tensor,
    eps_null: torch.Tensor,
    grad_sa: torch.Tensor,
    grad_sl: torch.Tensor,
    config: GuidanceConfig,
) -> torch.Tensor:
    """Classifier-free guidance combined with the alignment-loss gradients.

    Returns (1+s)*eps_text - s*eps_null + w_sa*grad_sa + w_sl*grad_sl. The
    loss terms enter as latent gradients; the DDIM update's negative epsilon
    coefficient turns the added gradients into descent on both losses.
    """
    for other in (eps_null, grad_sa, grad_sl):
        if other.shape != eps_text.shape:
            raise ContractError(
                f"shape mismatch: {tuple(other.shape)} vs {tuple(eps_text.shape)}"
            )
    return (
        (1.0 + config.s) * eps_text
        - config.s * eps_null
        + config.w_sa * grad_sa
        + config.w_sl * grad_sl
    )


@dataclass
class SampleResult:
    final: torch.Tensor
    latents: list                 # latents[k] aligns with trajectory indexing
    loss_records: list


def sample(
    initial: Optional[torch.Tensor],
    cond: Optional[Condition],
    schedule: NoiseSchedule,
    backend: DenoiserBackend,
    config: GuidanceConfig,
    guidance_hook: Optional[Callable] = None,
    rng_seed: Optional[int] = None,
) -> SampleResult:
    """Run guided DDIM sampling from the noise endpoint down to a clean latent.

    ``initial`` is normally the inversion endpoint; ``None`` draws a seeded
    Gaussian (prompt-only baseline). ``guidance_hook(z, k)`` must return
    ``(grad_sa, grad_sl, record)`` and is consulted only for steps k <= n_p.
    """
    if config.n_t != schedule.ddim_steps:
        raise ParameterError(
            f"config.n_t={config.n_t} != schedule.ddim_steps={schedule.ddim_steps}"
        )
    if initial is None:
        gen = torch.Generator().manual_seed(config.seed if rng_seed is None else rng_seed)
        shape = backend.capabilities.latent_shape
        initial = torch.randn(shape, dtype=backend.capabilities.dtype, generator=gen)
    z = initial.clone()
    latents = [None] * (schedule.ddim_steps + 1)
    latents[schedule.ddim_steps] = z.clone()
    loss_records = []
    zeros = torch.zeros_like(z)
    with torch.no_grad():
        for k in range(schedule.ddim_steps, 0, -1):
            t_k = schedule.timestep(k)
            eps_text = backend.predict_noise(z, t_k, cond)
            eps_null = backend.predict_noise(z, t_k, None)
            grad_sa, grad_sl = zeros, zeros
            if guidance_hook is not None and k <= config.n_p:
                grad_sa, grad_sl, record = guidance_hook(z, k)
                loss_records.append(record)
            eps_hat = guided_epsilon(eps_text, eps_null, grad_sa, grad_sl, config)
            z = ddim_update(z, eps_hat, schedule.alpha_bar_at(k), schedule.alpha_bar_at(k - 1))
            latents[k - 1] = z.clone()
    return SampleResult(final=z, latents=latents, loss_records=loss_records)
