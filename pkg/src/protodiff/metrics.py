"""Object-region fidelity metrics: PSNR and SSIM over layout-box unions."""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.ndimage import uniform_filter

from .errors import ContractError, RegionError
from .layouts import Layout

DEFAULT_MAX_VALUE = 255.0
DEFAULT_SSIM_WINDOW = 7


def _check_pair(a, b, region):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractError(f"image shapes disagree: {a.shape} vs {b.shape}")
    region = np.asarray(region, dtype=bool)
    if region.shape != a.shape[:2]:
        raise ContractError(f"region shape {region.shape} != image spatial {a.shape[:2]}")
    return a, b, region


def region_mse(a, b, region) -> float:
    """Mean squared error over region pixels, all channels."""
    a, b, region = _check_pair(a, b, region)
    if not region.any():
        raise RegionError("region is empty")
    diff = (a - b)[region]
    return float(np.mean(diff**2))


def region_psnr(a, b, region, max_value: float = DEFAULT_MAX_VALUE) -> float:
    """PSNR in dB over the region; math.inf for identical regions."""
    mse = region_mse(a, b, region)
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(max_value * max_value / mse)


def _to_gray(img: np.ndarray) -> np.ndarray:
    if img.ndim == 2:
        return img
    if img.ndim == 3:
        return img.mean(axis=2)
    raise ContractError(f"expected [H,W] or [H,W,C] image, got shape {img.shape}")


def region_ssim(
    a,
    b,
    region,
    window: int = DEFAULT_SSIM_WINDOW,
    max_value: float = DEFAULT_MAX_VALUE,
) -> float:
    """Mean local SSIM over windows whose centers lie in the region.

    Uniform window, standard constants C1=(0.01*max)^2, C2=(0.03*max)^2,
    biased variance estimates, grayscale by channel mean. Only windows fully
    inside the image contribute.
    """
    a, b, region = _check_pair(a, b, region)
    if window % 2 != 1 or window < 3:
        raise ContractError("window must be an odd integer >= 3")
    if not region.any():
        raise RegionError("region is empty")
    rows, cols = np.nonzero(region)
    if rows.max() - rows.min() + 1 < window or cols.max() - cols.min() + 1 < window:
        raise RegionError(
            f"region bounding box smaller than the {window}x{window} SSIM window"
        )
    ga, gb = _to_gray(a), _to_gray(b)
    h, w = ga.shape
    r = window // 2
    valid = np.zeros((h, w), dtype=bool)
    valid[r : h - r, r : w - r] = True
    centers = region & valid
    if not centers.any():
        raise RegionError("no full SSIM window has its center inside the region")
    mu_a = uniform_filter(ga, size=window)
    mu_b = uniform_filter(gb, size=window)
    var_a = uniform_filter(ga * ga, size=window) - mu_a * mu_a
    var_b = uniform_filter(gb * gb, size=window) - mu_b * mu_b
    cov = uniform_filter(ga * gb, size=window) - mu_a * mu_b
    c1 = (0.01 * max_value) ** 2
    c2 = (0.03 * max_value) ** 2
    ssim_map = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / (
        (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    )
    return float(ssim_map[centers].mean())


def rasterize_boxes(layout: Layout) -> np.ndarray:
    """Union of layout boxes as a pixel-resolution boolean mask."""
    width, height = layout.image_size
    mask = np.zeros((height, width), dtype=bool)
    for box in layout.boxes:
        left, top = math.floor(box.left), math.floor(box.top)
        right, bottom = math.ceil(box.right), math.ceil(box.bottom)
        mask[max(0, top) : min(height, bottom), max(0, left) : min(width, right)] = True
    return mask


@dataclass
class RegionReport:
    """Per-pair fidelity over the object-box union and its complement."""

    psnr_object: Optional[float]
    ssim_object: Optional[float]
    psnr_background: float
    ssim_background: float
    object_pixels: int
    background_pixels: int

    def to_line(self, name: str = "") -> str:
        def fmt(v):
            if v is None:
                return "n/a"
            if math.isinf(v):
                return "inf"
            return f"{v:.4f}"

        prefix = f"{name} " if name else ""
        return (
            f"{prefix}psnr_object={fmt(self.psnr_object)} "
            f"ssim_object={fmt(self.ssim_object)} "
            f"psnr_background={fmt(self.psnr_background)} "
            f"ssim_background={fmt(self.ssim_background)} "
            f"object_pixels={self.object_pixels} background_pixels={self.background_pixels}"
        )


def evaluate_pair(
    original,
    generated,
    layout: Layout,
    window: int = DEFAULT_SSIM_WINDOW,
    max_value: float = DEFAULT_MAX_VALUE,
) -> RegionReport:
    """Both metrics over both regions for one original/generated pair.

    With an empty layout the object metrics are absent and the background is
    the whole image.
    """
    original = np.asarray(original, dtype=np.float64)
    generated = np.asarray(generated, dtype=np.float64)
    if original.shape != generated.shape:
        raise ContractError(
            f"image shapes disagree: {original.shape} vs {generated.shape}"
        )
    object_mask = rasterize_boxes(layout)
    background = ~object_mask
    h, w = object_mask.shape
    if not layout.boxes:
        return RegionReport(
            psnr_object=None,
            ssim_object=None,
            psnr_background=region_psnr(original, generated, background, max_value),
            ssim_background=region_ssim(original, generated, background, window, max_value),
            object_pixels=0,
            background_pixels=h * w,
        )
    return RegionReport(
        psnr_object=region_psnr(original, generated, object_mask, max_value),
        ssim_object=region_ssim(original, generated, object_mask, window, max_value),
        psnr_background=region_psnr(original, generated, background, max_value),
        ssim_background=region_ssim(original, generated, background, window, max_value),
        object_pixels=int(object_mask.sum()),
        background_pixels=int(background.sum()),
    )
