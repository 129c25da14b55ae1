"""Alignment energies and the per-step guidance assembly for the sampler."""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch

from .backends.base import Condition, DenoiserBackend
from .errors import CapabilityError, ContractError, ParameterError
from .pca import PrototypeStore, project_onto_torch
from .sampler import GuidanceConfig
from .schedule import NoiseSchedule

log = logging.getLogger(__name__)


def _as_torch(arr, like: torch.Tensor) -> torch.Tensor:
    if isinstance(arr, torch.Tensor):
        return arr.to(dtype=like.dtype, device=like.device)
    return torch.as_tensor(np.asarray(arr, dtype=np.float64), dtype=like.dtype, device=like.device)


def g_sa(components_now, prototype, mask):
    """Masked squared error between live and prototype component maps.

    Returns a torch scalar when ``components_now`` is a tensor (so gradients
    can flow), otherwise a plain float.
    """
    if isinstance(components_now, torch.Tensor):
        proto = _as_torch(prototype, components_now)
        msk = _as_torch(mask, components_now)
        if proto.shape != components_now.shape or msk.shape != components_now.shape[1:]:
            raise ContractError("component/prototype/mask shapes disagree")
        diff = msk * (components_now - proto)
        return (diff**2).sum()
    now = np.asarray(components_now, dtype=np.float64)
    proto = np.asarray(prototype, dtype=np.float64)
    msk = np.asarray(mask, dtype=np.float64)
    if proto.shape != now.shape or msk.shape != now.shape[1:]:
        raise ContractError("component/prototype/mask shapes disagree")
    return float(((msk * (now - proto)) ** 2).sum())


def _check_sl_inputs(z_t, z_inv_t, indicator, n_objects):
    if z_t.shape != z_inv_t.shape:
        raise ContractError(
            f"latent shapes disagree: {tuple(z_t.shape)} vs {tuple(z_inv_t.shape)}"
        )
    if tuple(indicator.shape) != tuple(z_t.shape[-2:]):
        raise ContractError(
            f"indicator shape {tuple(indicator.shape)} != latent spatial {tuple(z_t.shape[-2:])}"
        )
    nonzero = bool(
        indicator.any() if isinstance(indicator, (np.ndarray, torch.Tensor)) else np.any(indicator)
    )
    if nonzero and n_objects < 1:
        raise ContractError("nonzero indicator requires n_objects >= 1")
    return nonzero


def g_sl(z_t, z_inv_t, indicator, n_objects: int):
    """Layout-masked squared latent error, normalized by the object count."""
    nonzero = _check_sl_inputs(z_t, z_inv_t, indicator, n_objects)
    if not nonzero:
        return z_t.new_tensor(0.0) if isinstance(z_t, torch.Tensor) else 0.0
    if isinstance(z_t, torch.Tensor):
        ind = _as_torch(indicator, z_t)
        diff = ind * (z_inv_t - z_t)
        return (diff**2).sum() / n_objects
    ind = np.asarray(indicator, dtype=np.float64)
    diff = ind * (np.asarray(z_inv_t, dtype=np.float64) - np.asarray(z_t, dtype=np.float64))
    return float((diff**2).sum()) / n_objects


def g_sl_gradient(z_t, z_inv_t, indicator, n_objects: int):
    """Closed-form gradient of :func:`g_sl` with respect to ``z_t``."""
    nonzero = _check_sl_inputs(z_t, z_inv_t, indicator, n_objects)
    if isinstance(z_t, torch.Tensor):
        if not nonzero:
            return torch.zeros_like(z_t)
        ind = _as_torch(indicator, z_t)
        return (2.0 / n_objects) * ind * (z_t - z_inv_t)
    z_t = np.asarray(z_t, dtype=np.float64)
    if not nonzero:
        return np.zeros_like(z_t)
    ind = np.asarray(indicator, dtype=np.float64)
    return (2.0 / n_objects) * ind * (z_t - np.asarray(z_inv_t, dtype=np.float64))


@dataclass
class StepLossRecord:
    t: int
    g_sa: float
    g_sl: float
    grad_sa_norm: float
    grad_sl_norm: float

    def to_line(self) -> str:
        return (
            f"t={self.t} g_sa={self.g_sa:.6e} g_sl={self.g_sl:.6e} "
            f"grad_sa_norm={self.grad_sa_norm:.6e} grad_sl_norm={self.grad_sl_norm:.6e}"
        )


@dataclass
class GuidanceState:
    """Everything the per-step guidance needs, resolved before sampling."""

    store: PrototypeStore
    inversion_latents: dict       # step t -> torch latent z^I_t
    latent_indicator: torch.Tensor  # [H, W] object raster at latent resolution
    n_objects: int
    cond: Optional[Condition]
    schedule: NoiseSchedule
    n_p: int
    mask_override: Optional[np.ndarray] = None  # replaces stored masks (ablations)
    refit_pca: bool = False
    use_sa: bool = True
    use_sl: bool = True

    def step_targets(self, t: int):
        entry = self.store.entry(t)
        if self.mask_override is not None:
            mask = self.mask_override
            prototype = entry.pca.components * mask
        else:
            mask = entry.mask
            prototype = entry.prototype
        return entry.pca, prototype, mask


def _refit_components_torch(keys: torch.Tensor, n_b: int) -> torch.Tensor:
    """Differentiable live PCA for the refit ablation (basis not shared)."""
    n_c = keys.shape[0]
    x = keys.reshape(n_c, -1).T
    xc = x - x.mean(dim=0)
    _, _, vh = torch.linalg.svd(xc, full_matrices=False)
    basis = vh[:n_b]
    flip = torch.sign(
        basis[torch.arange(basis.shape[0]), basis.abs().argmax(dim=1)]
    )
    flip = torch.where(flip == 0, torch.ones_like(flip), flip)
    basis = basis * flip[:, None]
    coords = xc @ basis.T
    return coords.T.reshape(n_b, *keys.shape[1:])


def assemble_step_guidance(
    z_t: torch.Tensor,
    t: int,
    state: GuidanceState,
    backend: DenoiserBackend,
    config: GuidanceConfig,
):
    """Compute both alignment gradients and a loss-log record for step t."""
    if t > state.n_p:
        raise ParameterError(f"guidance requested at step {t} > n_p={state.n_p}")
    pca, prototype, mask = state.step_targets(t)
    train_t = state.schedule.timestep(t)
    n_b = prototype.shape[0]

    sa_value = [float("nan")]

    def sa_loss(features, _z):
        if state.refit_pca:
            comps = _refit_components_torch(features.self_keys, n_b)
        else:
            comps = project_onto_torch(pca, features.self_keys)
        loss = g_sa(comps, prototype, mask)
        sa_value[0] = float(loss.detach())
        return loss

    if not state.use_sa:
        grad_sa = torch.zeros_like(z_t)
        sa_value[0] = 0.0
    else:
        try:
            grad_sa = backend.loss_input_gradient(z_t, train_t, state.cond, sa_loss)
        except CapabilityError:
            log.warning(
                "backend %s lacks input gradients; semantic alignment disabled for step %d",
                type(backend).__name__,
                t,
            )
            grad_sa = torch.zeros_like(z_t)
            with torch.no_grad():
                features = backend.capture_features(z_t, train_t, state.cond)
                sa_loss(features, z_t)

    if not state.use_sl:
        sl_value = 0.0
        grad_sl = torch.zeros_like(z_t)
    else:
        z_inv = state.inversion_latents[t]
        sl_value = g_sl(z_t, z_inv, state.latent_indicator, state.n_objects)
        grad_sl = g_sl_gradient(z_t, z_inv, state.latent_indicator, state.n_objects)
    record = StepLossRecord(
        t=t,
        g_sa=sa_value[0],
        g_sl=float(sl_value),
        grad_sa_norm=float(torch.linalg.vector_norm(grad_sa)),
        grad_sl_norm=float(torch.linalg.vector_norm(grad_sl)),
    )
    return grad_sa, grad_sl, record


def build_hook(state: GuidanceState, backend: DenoiserBackend, config: GuidanceConfig):
    """Wrap the guidance state into the sampler's per-step hook."""
    state.store.validate()

    def hook(z_t, k):
        return assemble_step_guidance(z_t, k, state, backend, config)

    return hook
