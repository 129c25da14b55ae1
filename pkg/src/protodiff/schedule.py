"""Discrete diffusion noise schedule and the deterministic DDIM update rule."""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, ParameterError, StepRangeError


@dataclass(frozen=True)
class NoiseSchedule:
    """Cumulative-alpha schedule plus a sub-step index map for DDIM runs.

    ``step_index[k-1]`` is the train timestep of DDIM step k (1-based,
    k = 1..ddim_steps); step 0 is the clean endpoint with alpha_bar == 1.
    """

    train_steps: int
    alpha_bar: np.ndarray
    ddim_steps: int
    step_index: np.ndarray = field(repr=False)

    def validate(self) -> None:
        ab = self.alpha_bar
        if len(ab) != self.train_steps:
            raise ParameterError("alpha_bar length must equal train_steps")
        if not np.all(np.diff(ab) < 0):
            raise ParameterError("alpha_bar must be strictly decreasing")
        if ab[0] < 0.99:
            raise ParameterError(f"alpha_bar[0]={ab[0]:.4f} must be >= 0.99")
        if ab[-1] >= 0.05:
            raise ParameterError(f"alpha_bar[-1]={ab[-1]:.4f} must be < 0.05")
        si = self.step_index
        if len(si) != self.ddim_steps:
            raise ParameterError("step_index length must equal ddim_steps")
        if not np.all(np.diff(si) > 0):
            raise ParameterError("step_index must be strictly increasing")
        if si[-1] != self.train_steps - 1:
            raise ParameterError("step_index must end at train_steps - 1")

    def timestep(self, k: int) -> int:
        """Train timestep of DDIM step k in 1..ddim_steps."""
        if not 1 <= k <= self.ddim_steps:
            raise StepRangeError(f"DDIM step {k} outside 1..{self.ddim_steps}")
        return int(self.step_index[k - 1])

    def alpha_bar_at(self, k: int) -> float:
        """Cumulative alpha at DDIM step k; k=0 is the exact clean endpoint."""
        if k == 0:
            return 1.0
        return float(self.alpha_bar[self.timestep(k)])


def build_schedule(
    train_steps: int,
    ddim_steps: int,
    beta_start: float = 1e-4,
    beta_end: float = 2e-2,
) -> NoiseSchedule:
    """Linear-beta schedule with a uniform-stride DDIM sub-step map."""
    if train_steps < 1:
        raise ParameterError("train_steps must be positive")
    if not 1 <= ddim_steps <= train_steps:
        raise ParameterError(
            f"ddim_steps={ddim_steps} must be in 1..train_steps={train_steps}"
        )
    betas = np.linspace(beta_start, beta_end, train_steps, dtype=np.float64)
    alpha_bar = np.cumprod(1.0 - betas)
    # grid[0] = -1 marks the clean endpoint; entries 1..N are train timesteps
    grid = np.rint(np.linspace(-1, train_steps - 1, ddim_steps + 1)).astype(np.int64)
    grid[0] = -1
    grid[-1] = train_steps - 1
    schedule = NoiseSchedule(
        train_steps=train_steps,
        alpha_bar=alpha_bar,
        ddim_steps=ddim_steps,
        step_index=grid[1:],
    )
    schedule.validate()
    return schedule


def ddim_update(z, eps_hat, alpha_bar_from: float, alpha_bar_to: float):
    """Deterministic DDIM transition between two cumulative-alpha levels.

    Estimates the clean signal from (z, eps_hat) at the source level and
    re-noises it to the target level. A fixed point when the two levels
    coincide. Works on numpy arrays and torch tensors alike.
    """
    if z.shape != eps_hat.shape:
        raise ContractError(
            f"latent shape {tuple(z.shape)} != eps shape {tuple(eps_hat.shape)}"
        )
    x0_hat = (z - math.sqrt(1.0 - alpha_bar_from) * eps_hat) / math.sqrt(alpha_bar_from)
    return math.sqrt(alpha_bar_to) * x0_hat + math.sqrt(1.0 - alpha_bar_to) * eps_hat


def ddim_step(z, eps_hat, k: int, schedule: NoiseSchedule, direction: str):
    """One DDIM step along the schedule's sub-step grid.

    ``direction='reverse'`` maps step k to k-1 (denoising); ``'forward'``
    maps step k-1 to k (inversion). k is valid in 1..ddim_steps for both.
    """
    if direction not in ("forward", "reverse"):
        raise StepRangeError(f"unknown direction {direction!r}")
    if not 1 <= k <= schedule.ddim_steps:
        raise StepRangeError(f"step {k} outside 1..{schedule.ddim_steps}")
    a_hi = schedule.alpha_bar_at(k)
    a_lo = schedule.alpha_bar_at(k - 1)
    if direction == "reverse":
        return ddim_update(z, eps_hat, a_hi, a_lo)
    return ddim_update(z, eps_hat, a_lo, a_hi)
