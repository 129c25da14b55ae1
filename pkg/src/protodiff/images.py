"""PNG I/O and the pixel <-> latent range mapping."""

import numpy as np
import torch
from PIL import Image

from .errors import ContractError


def load_image(path) -> np.ndarray:
    """8-bit RGB array [H, W, 3]."""
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.uint8)


def save_image(path, array: np.ndarray) -> None:
    if array.dtype != np.uint8 or array.ndim != 3:
        raise ContractError("expected uint8 [H, W, 3] image")
    Image.fromarray(array, mode="RGB").save(path)


def to_latent(image: np.ndarray, dtype=torch.float32) -> torch.Tensor:
    """Map uint8 [H, W, 3] pixels to a [3, H, W] latent in [-1, 1]."""
    arr = torch.from_numpy(np.ascontiguousarray(image)).to(dtype)
    return arr.permute(2, 0, 1) / 127.5 - 1.0


def from_latent(z: torch.Tensor) -> np.ndarray:
    """Inverse of :func:`to_latent` with clamping and rounding."""
    arr = (z.detach().to(torch.float64).clamp(-1.0, 1.0) + 1.0) * 127.5
    return np.rint(arr.permute(1, 2, 0).numpy()).astype(np.uint8)
