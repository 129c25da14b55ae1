"""Pluggable denoiser contract shared by the analytic and toy backends."""

import math
from dataclasses import dataclass
from typing import Callable, Optional

import torch

from ..errors import CapabilityError, ContractError


@dataclass(frozen=True)
class Condition:
    """Text conditioning as a bag of concept words plus an optional scenario tag.

    ``None`` in backend calls stands for the null (unconditional) embedding.
    """

    words: tuple
    scenario: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "words", tuple(self.words))


@dataclass(frozen=True)
class BackendCapabilities:
    latent_shape: tuple          # (C, H, W)
    feature_grid_shape: tuple    # (N_c, H_f, W_f)
    downsample: int              # image -> feature grid factor
    supports_input_gradients: bool
    concurrent_inference: bool
    dtype: torch.dtype

    def __post_init__(self):
        _, h, w = self.latent_shape
        _, hf, wf = self.feature_grid_shape
        if hf != math.ceil(h / self.downsample) or wf != math.ceil(w / self.downsample):
            raise ContractError(
                f"feature grid {hf}x{wf} inconsistent with latent {h}x{w} "
                f"at downsample {self.downsample}"
            )


@dataclass
class FeatureRecord:
    """Features captured from one denoiser evaluation.

    ``self_keys``: [N_c, H_f, W_f] key projections of the designated
    self-attention layer. ``cross_maps``: one [H_f, W_f] relevance map per
    distinct concept word in the conditioning (duplicates merged pointwise).
    """

    self_keys: torch.Tensor
    cross_maps: dict

    def validate(self, capabilities: BackendCapabilities) -> None:
        if tuple(self.self_keys.shape) != tuple(capabilities.feature_grid_shape):
            raise ContractError(
                f"self_keys shape {tuple(self.self_keys.shape)} != declared "
                f"{tuple(capabilities.feature_grid_shape)}"
            )
        grid = tuple(capabilities.feature_grid_shape[1:])
        for word, cmap in self.cross_maps.items():
            if tuple(cmap.shape) != grid:
                raise ContractError(f"cross map for {word!r} has shape {tuple(cmap.shape)}")
            if not torch.isfinite(cmap).all():
                raise ContractError(f"cross map for {word!r} contains non-finite values")


class DenoiserBackend:
    """Interface every denoiser backend implements.

    Latents are [C, H, W] torch tensors in the backend's declared dtype;
    timesteps are integer train timesteps; ``cond`` is a Condition or None.
    """

    @property
    def capabilities(self) -> BackendCapabilities:
        raise NotImplementedError

    def predict_noise(self, z: torch.Tensor, t: int, cond: Optional[Condition]) -> torch.Tensor:
        raise NotImplementedError

    def capture_features(self, z: torch.Tensor, t: int, cond: Optional[Condition]) -> FeatureRecord:
        raise NotImplementedError

    def loss_input_gradient(
        self,
        z: torch.Tensor,
        t: int,
        cond: Optional[Condition],
        loss_spec: Callable[[FeatureRecord, torch.Tensor], torch.Tensor],
    ) -> torch.Tensor:
        """Gradient of ``loss_spec(features, z)`` with respect to ``z``.

        Default implementation differentiates through ``capture_features``;
        backends that cannot expose input gradients raise CapabilityError.
        """
        if not self.capabilities.supports_input_gradients:
            raise CapabilityError(f"{type(self).__name__} has no input gradients")
        self._check_shape(z)
        with torch.enable_grad():  # callers may be inside no_grad sampling loops
            z_req = z.detach().clone().requires_grad_(True)
            features = self.capture_features(z_req, t, cond)
            loss = loss_spec(features, z_req)
            if loss.dim() != 0:
                raise ContractError("loss_spec must return a scalar")
            (grad,) = torch.autograd.grad(loss, z_req)
        return grad.detach()

    def _check_shape(self, z: torch.Tensor) -> None:
        if tuple(z.shape) != tuple(self.capabilities.latent_shape):
            raise ContractError(
                f"latent shape {tuple(z.shape)} != declared "
                f"{tuple(self.capabilities.latent_shape)}"
            )
