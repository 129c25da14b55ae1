"""Closed-form Gaussian-score backend for exact-math testing.

Models the data distribution as N(mean, var*I). The marginal at train
timestep t is then N(sqrt(abar_t)*mean, (abar_t*var + 1 - abar_t)*I), whose
score is available in closed form, so every sampler/guidance code path can
run under float64 without any learned weights.
"""

import math
import zlib
from typing import Optional

import torch
import torch.nn.functional as F

from ..errors import ContractError
from ..schedule import NoiseSchedule
from .base import BackendCapabilities, Condition, DenoiserBackend, FeatureRecord


class AnalyticBackend(DenoiserBackend):
    """Exact epsilon predictions plus deterministic pseudo-features.

    The pseudo-features (a fixed seeded linear projection of the
    average-pooled latent) stand in for attention features so that the
    prototype-extraction and guidance stages are exercisable under exact
    math; they carry no learned semantics.
    """

    def __init__(
        self,
        schedule: NoiseSchedule,
        latent_shape=(3, 32, 64),
        mean: Optional[torch.Tensor] = None,
        var: float = 1.0,
        feature_channels: int = 64,
        downsample: int = 4,
        feature_seed: int = 99,
    ):
        c, h, w = latent_shape
        self.schedule = schedule
        self.var = float(var)
        if mean is None:
            mean = torch.zeros(latent_shape, dtype=torch.float64)
        if tuple(mean.shape) != tuple(latent_shape):
            raise ContractError("mean must match the latent shape")
        self.mean = mean.to(torch.float64)
        self._caps = BackendCapabilities(
            latent_shape=(c, h, w),
            feature_grid_shape=(feature_channels, math.ceil(h / downsample), math.ceil(w / downsample)),
            downsample=downsample,
            supports_input_gradients=True,
            concurrent_inference=True,
            dtype=torch.float64,
        )
        gen = torch.Generator().manual_seed(feature_seed)
        self._proj = torch.randn(feature_channels, c, dtype=torch.float64, generator=gen)
        self._word_seed = feature_seed
        self._word_vecs = {}

    @property
    def capabilities(self) -> BackendCapabilities:
        return self._caps

    def predict_noise(self, z, t, cond=None):
        self._check_shape(z)
        abar = float(self.schedule.alpha_bar[t])
        total_var = abar * self.var + (1.0 - abar)
        return math.sqrt(1.0 - abar) * (z - math.sqrt(abar) * self.mean) / total_var

    def capture_features(self, z, t, cond=None):
        self._check_shape(z)
        _, hf, wf = self._caps.feature_grid_shape
        pooled = F.adaptive_avg_pool2d(z.unsqueeze(0), (hf, wf)).squeeze(0)
        keys = torch.einsum("nc,chw->nhw", self._proj.to(z.dtype), pooled)
        cross = {}
        if cond is not None:
            for word in dict.fromkeys(cond.words):
                vec = self._word_vector(word).to(z.dtype)
                cross[word] = torch.einsum("c,chw->hw", vec, pooled)
        return FeatureRecord(self_keys=keys, cross_maps=cross)

    def _word_vector(self, word: str) -> torch.Tensor:
        if word not in self._word_vecs:
            seed = (self._word_seed * 0x9E3779B1 + zlib.crc32(word.encode("utf-8"))) % (2**31)
            gen = torch.Generator().manual_seed(int(seed))
            c = self._caps.latent_shape[0]
            self._word_vecs[word] = torch.randn(c, dtype=torch.float64, generator=gen)
        return self._word_vecs[word]
