"""Small attention U-Net denoiser with word/scenario conditioning.

Two downsampling levels (32x64 -> 8x16); one self-attention block opens the
decoder (its keys are the captured features) and one cross-attention block in
the middle injects the learned concept/scenario embeddings.
"""

import hashlib
import json
import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..container import read_container, write_container
from ..errors import ContractError, VocabularyError
from ..schedule import NoiseSchedule, build_schedule
from .base import BackendCapabilities, Condition, DenoiserBackend, FeatureRecord

NULL_TOKEN = "<null>"
DEFAULT_VOCAB = (
    NULL_TOKEN,
    "car",
    "pedestrian",
    "cyclist",
    "clean",
    "snow",
    "fog",
    "rain",
    "night",
    "defocus",
    "sandstorm",
)
CHECKPOINT_VERSION = 1


def timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=t.dtype, device=t.device) / half
    )
    args = t[:, None].to(freqs.dtype) * freqs[None]
    return torch.cat([torch.cos(args), torch.sin(args)], dim=1)


class ResBlock(nn.Module):
    def __init__(self, c_in, c_out, time_dim, groups=8):
        super().__init__()
        self.norm1 = nn.GroupNorm(groups, c_in)
        self.conv1 = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.time_proj = nn.Linear(time_dim, c_out)
        self.norm2 = nn.GroupNorm(groups, c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.skip = nn.Conv2d(c_in, c_out, 1) if c_in != c_out else nn.Identity()

    def forward(self, x, temb):
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.time_proj(F.silu(temb))[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


class SelfAttention2d(nn.Module):
    def __init__(self, channels, groups=8):
        super().__init__()
        self.norm = nn.GroupNorm(groups, channels)
        self.to_q = nn.Linear(channels, channels)
        self.to_k = nn.Linear(channels, channels)
        self.to_v = nn.Linear(channels, channels)
        self.proj = nn.Linear(channels, channels)

    def forward(self, x, capture=None):
        b, c, h, w = x.shape
        seq = self.norm(x).reshape(b, c, h * w).transpose(1, 2)
        q, k, v = self.to_q(seq), self.to_k(seq), self.to_v(seq)
        if capture is not None:
            capture["self_keys"] = k.transpose(1, 2).reshape(b, c, h, w)
        attn = torch.softmax(q @ k.transpose(1, 2) / math.sqrt(c), dim=-1)
        out = self.proj(attn @ v).transpose(1, 2).reshape(b, c, h, w)
        return x + out


class CrossAttention2d(nn.Module):
    def __init__(self, channels, token_dim, groups=8):
        super().__init__()
        self.norm = nn.GroupNorm(groups, channels)
        self.to_q = nn.Linear(channels, channels)
        self.to_k = nn.Linear(token_dim, channels)
        self.to_v = nn.Linear(token_dim, channels)
        self.proj = nn.Linear(channels, channels)

    def forward(self, x, tokens, token_mask, capture=None):
        b, c, h, w = x.shape
        seq = self.norm(x).reshape(b, c, h * w).transpose(1, 2)
        q = self.to_q(seq)
        k, v = self.to_k(tokens), self.to_v(tokens)
        logits = q @ k.transpose(1, 2) / math.sqrt(c)
        logits = logits.masked_fill(~token_mask[:, None, :], float("-inf"))
        attn = torch.softmax(logits, dim=-1)
        if capture is not None:
            capture["cross_attn"] = attn.reshape(b, h, w, -1)
        out = self.proj(attn @ v).transpose(1, 2).reshape(b, c, h, w)
        return x + out


class ToyUNet(nn.Module):
    def __init__(
        self,
        vocab_size=len(DEFAULT_VOCAB),
        in_channels=3,
        base=32,
        mid=48,
        deep=64,
        time_dim=64,
        token_dim=64,
    ):
        super().__init__()
        self.arch = {
            "vocab_size": vocab_size,
            "in_channels": in_channels,
            "base": base,
            "mid": mid,
            "deep": deep,
            "time_dim": time_dim,
            "token_dim": token_dim,
        }
        self.token_emb = nn.Embedding(vocab_size, token_dim)
        self.time_mlp = nn.Sequential(
            nn.Linear(time_dim, time_dim), nn.SiLU(), nn.Linear(time_dim, time_dim)
        )
        self.stem = nn.Conv2d(in_channels, base, 3, padding=1)
        self.enc1 = ResBlock(base, base, time_dim)
        self.down1 = nn.Conv2d(base, mid, 3, stride=2, padding=1)
        self.enc2 = ResBlock(mid, mid, time_dim)
        self.down2 = nn.Conv2d(mid, deep, 3, stride=2, padding=1)
        self.mid1 = ResBlock(deep, deep, time_dim)
        self.cross = CrossAttention2d(deep, token_dim)
        self.mid2 = ResBlock(deep, deep, time_dim)
        self.dec_attn = SelfAttention2d(deep)  # designated feature layer
        self.dec0 = ResBlock(deep, deep, time_dim)
        self.up1 = nn.ConvTranspose2d(deep, mid, 2, stride=2)
        self.dec1 = ResBlock(mid + mid, mid, time_dim)
        self.up2 = nn.ConvTranspose2d(mid, base, 2, stride=2)
        self.dec2 = ResBlock(base + base, base, time_dim)
        self.out_norm = nn.GroupNorm(8, base)
        self.out = nn.Conv2d(base, in_channels, 3, padding=1)

    def forward(self, z, t, token_ids, token_mask, capture=None):
        tokens = self.token_emb(token_ids)
        temb = self.time_mlp(timestep_embedding(t, self.arch["time_dim"]))
        h1 = self.enc1(self.stem(z), temb)
        h2 = self.enc2(self.down1(h1), temb)
        h3 = self.mid1(self.down2(h2), temb)
        h3 = self.cross(h3, tokens, token_mask, capture=capture)
        h3 = self.mid2(h3, temb)
        h3 = self.dec_attn(h3, capture=capture)
        h3 = self.dec0(h3, temb)
        u1 = self.dec1(torch.cat([self.up1(h3), h2], dim=1), temb)
        u2 = self.dec2(torch.cat([self.up2(u1), h1], dim=1), temb)
        return self.out(F.silu(self.out_norm(u2)))


class ToyBackend(DenoiserBackend):
    """Backend wrapper exposing the denoiser contract over a ToyUNet."""

    def __init__(
        self,
        model: ToyUNet,
        schedule: NoiseSchedule,
        vocab=DEFAULT_VOCAB,
        latent_hw=(32, 64),
        dtype=torch.float32,
        beta_range=(1e-4, 2e-2),
    ):
        h, w = latent_hw
        if len(vocab) != model.arch["vocab_size"]:
            raise ContractError("vocabulary length != model embedding table size")
        self.model = model.to(dtype).eval()
        for p in self.model.parameters():
            p.requires_grad_(False)
        self.schedule = schedule
        self.beta_range = tuple(beta_range)
        self.vocab = tuple(vocab)
        self.token_index = {word: i for i, word in enumerate(self.vocab)}
        self._caps = BackendCapabilities(
            latent_shape=(model.arch["in_channels"], h, w),
            feature_grid_shape=(model.arch["deep"], h // 4, w // 4),
            downsample=4,
            supports_input_gradients=True,
            concurrent_inference=True,
            dtype=dtype,
        )

    @property
    def capabilities(self) -> BackendCapabilities:
        return self._caps

    def token_ids(self, cond) -> list:
        if cond is None:
            return [self.token_index[NULL_TOKEN]]
        ids = []
        for word in cond.words:
            if word not in self.token_index:
                raise VocabularyError(f"unknown concept word {word!r}")
            ids.append(self.token_index[word])
        if cond.scenario is not None:
            if cond.scenario not in self.token_index:
                raise VocabularyError(f"unknown scenario word {cond.scenario!r}")
            ids.append(self.token_index[cond.scenario])
        if not ids:
            ids = [self.token_index[NULL_TOKEN]]
        return ids

    def _forward(self, z, t, cond, capture=None):
        self._check_shape(z)
        if not 0 <= t < self.schedule.train_steps:
            raise ContractError(f"train timestep {t} outside schedule")
        ids = torch.tensor([self.token_ids(cond)], dtype=torch.long)
        mask = torch.ones_like(ids, dtype=torch.bool)
        t_tensor = torch.full((1,), float(t), dtype=z.dtype)
        return self.model(z.unsqueeze(0), t_tensor, ids, mask, capture=capture)[0]

    def predict_noise(self, z, t, cond=None):
        if torch.is_grad_enabled() and z.requires_grad:
            return self._forward(z, t, cond)
        with torch.no_grad():
            return self._forward(z, t, cond)

    def capture_features(self, z, t, cond=None):
        capture = {}
        if torch.is_grad_enabled() and z.requires_grad:
            self._forward(z, t, cond, capture=capture)
        else:
            with torch.no_grad():
                self._forward(z, t, cond, capture=capture)
        keys = capture["self_keys"][0]
        attn = capture["cross_attn"][0]  # [H_f, W_f, T]
        cross = {}
        if cond is not None:
            for i, word in enumerate(cond.words):
                cmap = attn[..., i]
                if word in cross:
                    cross[word] = torch.maximum(cross[word], cmap)
                else:
                    cross[word] = cmap
        record = FeatureRecord(self_keys=keys, cross_maps=cross)
        record.validate(self._caps)
        return record

    def to_double(self):
        """Float64 view of this backend (used by finite-difference checks)."""
        return ToyBackend(
            model=self.model.double(),
            schedule=self.schedule,
            vocab=self.vocab,
            latent_hw=self._caps.latent_shape[1:],
            dtype=torch.float64,
            beta_range=self.beta_range,
        )


def architecture_hash(arch: dict, vocab) -> str:
    blob = json.dumps({"arch": arch, "vocab": list(vocab)}, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def save_checkpoint(path, backend: ToyBackend, train_log=None):
    manifest = {
        "kind": "toy_checkpoint",
        "version": CHECKPOINT_VERSION,
        "arch": backend.model.arch,
        "arch_hash": architecture_hash(backend.model.arch, backend.vocab),
        "vocab": list(backend.vocab),
        "latent_hw": list(backend.capabilities.latent_shape[1:]),
        "schedule": {
            "train_steps": backend.schedule.train_steps,
            "ddim_steps": backend.schedule.ddim_steps,
            "beta_start": backend.beta_range[0],
            "beta_end": backend.beta_range[1],
        },
        "train_log": train_log or [],
    }
    arrays = {
        f"param.{name}": tensor.detach().cpu().numpy()
        for name, tensor in backend.model.state_dict().items()
    }
    write_container(path, manifest, arrays)


def load_checkpoint(path) -> ToyBackend:
    manifest, arrays = read_container(path)
    if manifest.get("kind") != "toy_checkpoint":
        raise ContractError(f"{path} is not a toy checkpoint")
    if manifest.get("version") != CHECKPOINT_VERSION:
        raise ContractError(f"unsupported checkpoint version {manifest.get('version')}")
    arch = manifest["arch"]
    if manifest.get("arch_hash") != architecture_hash(arch, manifest["vocab"]):
        raise ContractError("checkpoint architecture hash mismatch")
    model = ToyUNet(**arch)
    state = {
        name[len("param.") :]: torch.from_numpy(arr)
        for name, arr in arrays.items()
        if name.startswith("param.")
    }
    model.load_state_dict(state)
    sched = manifest["schedule"]
    schedule = build_schedule(
        sched["train_steps"], sched["ddim_steps"], sched["beta_start"], sched["beta_end"]
    )
    return ToyBackend(
        model=model,
        schedule=schedule,
        vocab=tuple(manifest["vocab"]),
        latent_hw=tuple(manifest["latent_hw"]),
        beta_range=(sched["beta_start"], sched["beta_end"]),
    )
