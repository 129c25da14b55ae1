"""Concept-mask construction and prototype selection on the feature grid.

Coordinates on the grid are normalized to the unit square: a cell (row i,
col j) sits at p = (j + 0.5) / W_f, q = (i + 0.5) / H_f, and box centers use
the same convention, so the peak-function width sigma is resolution-free.
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ContractError, IncompleteStoreError, ParameterError
from .layouts import Layout
from .pca import PrototypeStore, StoreEntry


@dataclass
class GridLayout:
    """Layout boxes transformed to integer feature-grid coordinates."""

    boxes: list                   # (cls, left, top, right, bottom) ints, right/bottom exclusive
    centers: list                 # per box (p_hat, q_hat) in normalized [0,1]^2
    indicator: np.ndarray         # [H_f, W_f] bool, union of boxes
    grid_size: tuple              # (H_f, W_f)

    def __len__(self):
        return len(self.boxes)


def to_grid(layout: Layout, downsample: int) -> GridLayout:
    """Coordinate transform from image pixels to the feature grid.

    left/top round down, right/bottom round up; a box that would collapse is
    inflated to a single grid cell so tiny objects keep a footprint.
    """
    if downsample < 1:
        raise ParameterError("downsample must be >= 1")
    width, height = layout.image_size
    w_f = math.ceil(width / downsample)
    h_f = math.ceil(height / downsample)
    boxes, centers = [], []
    indicator = np.zeros((h_f, w_f), dtype=bool)
    for box in layout.boxes:
        left = math.floor(box.left / downsample)
        top = math.floor(box.top / downsample)
        right = math.ceil(box.right / downsample)
        bottom = math.ceil(box.bottom / downsample)
        left, right = max(0, left), min(w_f, right)
        top, bottom = max(0, top), min(h_f, bottom)
        if right <= left:  # tiny-object rule
            left = min(left, w_f - 1)
            right = left + 1
        if bottom <= top:
            top = min(top, h_f - 1)
            bottom = top + 1
        boxes.append((box.cls, left, top, right, bottom))
        centers.append(((left + right) / 2.0 / w_f, (top + bottom) / 2.0 / h_f))
        indicator[top:bottom, left:right] = True
    return GridLayout(boxes=boxes, centers=centers, indicator=indicator, grid_size=(h_f, w_f))


@dataclass
class ConceptMask:
    """Cross-attention relevance map, optionally layout-updated and binarized."""

    values: np.ndarray            # [H_f, W_f] float
    binarized: Optional[np.ndarray] = None
    normalization: dict = field(default_factory=dict)  # word -> (min, max)
    constant_words: list = field(default_factory=list)


def concept_mask(cross_maps: dict) -> ConceptMask:
    """Min-max normalize each concept map and combine by pointwise maximum.

    A constant map normalizes to all zeros and its word is flagged.
    """
    if not cross_maps:
        raise ContractError("at least one concept map is required")
    normalized, normalization, constant = [], {}, []
    shape = None
    for word, raw in cross_maps.items():
        arr = np.asarray(raw, dtype=np.float64)
        if shape is None:
            shape = arr.shape
        elif arr.shape != shape:
            raise ContractError(f"cross map for {word!r} has shape {arr.shape} != {shape}")
        if not np.isfinite(arr).all():
            raise ContractError(f"cross map for {word!r} contains non-finite values")
        lo, hi = float(arr.min()), float(arr.max())
        normalization[word] = (lo, hi)
        if hi - lo == 0.0:
            normalized.append(np.zeros(shape))
            constant.append(word)
        else:
            normalized.append((arr - lo) / (hi - lo))
    values = np.maximum.reduce(normalized)
    return ConceptMask(values=values, normalization=normalization, constant_words=constant)


def peak_weight(p: float, q: float, center: tuple, sigma: float) -> float:
    """Gaussian bump of Eq-style peak re-weighting at normalized (p, q)."""
    if not 0.0 < sigma < 1.0:
        raise ParameterError(f"sigma={sigma} must lie in (0, 1)")
    p_hat, q_hat = center
    d2 = (p - p_hat) ** 2 + (q - q_hat) ** 2
    return math.exp(-d2 / (2.0 * sigma * sigma))


def update_mask(values: np.ndarray, grid: GridLayout, sigma: float) -> np.ndarray:
    """Add the peak weight to every cell covered by a layout box.

    Cells inside several boxes take the weight of the nearest box center.
    Cells outside all boxes are returned unchanged.
    """
    if not 0.0 < sigma < 1.0:
        raise ParameterError(f"sigma={sigma} must lie in (0, 1)")
    h_f, w_f = grid.grid_size
    if values.shape != (h_f, w_f):
        raise ContractError(f"mask shape {values.shape} != grid {grid.grid_size}")
    if not grid.boxes:
        return values.copy()
    rows = (np.arange(h_f) + 0.5) / h_f
    cols = (np.arange(w_f) + 0.5) / w_f
    qq, pp = np.meshgrid(rows, cols, indexing="ij")
    dist2 = np.full((len(grid.boxes), h_f, w_f), np.inf)
    for b, ((_, left, top, right, bottom), (p_hat, q_hat)) in enumerate(
        zip(grid.boxes, grid.centers)
    ):
        inside = np.zeros((h_f, w_f), dtype=bool)
        inside[top:bottom, left:right] = True
        d2 = (pp - p_hat) ** 2 + (qq - q_hat) ** 2
        dist2[b][inside] = d2[inside]
    nearest = dist2.min(axis=0)
    covered = np.isfinite(nearest)
    out = values.copy()
    out[covered] += np.exp(-nearest[covered] / (2.0 * sigma * sigma))
    return out


def binarize(values: np.ndarray, tau: float) -> np.ndarray:
    """Strict threshold: True exactly where values > tau."""
    if not 0.0 <= tau < 1.0:
        raise ParameterError(f"tau={tau} must lie in [0, 1)")
    return np.asarray(values) > tau


def extract_prototypes(
    components_per_step: dict,
    mask: np.ndarray,
    n_p: int,
    config: Optional[dict] = None,
) -> PrototypeStore:
    """Restrict each captured step's components by the binarized mask.

    ``components_per_step`` maps DDIM step t to PrincipalComponents; steps
    1..n_p must all be present.
    """
    mask = np.asarray(mask, dtype=bool)
    store = PrototypeStore(n_p=n_p, config=dict(config or {}))
    for t in range(1, n_p + 1):
        if t not in components_per_step:
            raise IncompleteStoreError(f"components missing for step {t}")
        pca = components_per_step[t]
        if pca.components.shape[1:] != mask.shape:
            raise ContractError(
                f"step {t}: components grid {pca.components.shape[1:]} != mask {mask.shape}"
            )
        store.entries[t] = StoreEntry(
            pca=pca,
            prototype=pca.components * mask,
            mask=mask.copy(),
        )
    store.validate()
    return store
