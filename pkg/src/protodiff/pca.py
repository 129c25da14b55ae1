"""Per-timestep PCA over attention keys and the serialized prototype store."""

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np
import torch

from .container import read_container, write_container
from .errors import ContractError, ParameterError

STORE_VERSION = 1
DEFAULT_N_COMPONENTS = 8
_RANK_CUTOFF = 1e-10  # eigenvalues below cutoff*trace are treated as rank-deficient


@dataclass
class PrincipalComponents:
    """Top principal components of one step's attention keys.

    ``components[i]`` holds, per spatial position, the coordinate of the
    mean-centered keys along ``basis[i]``. Basis rows are orthonormal and
    sign-canonicalized (largest-magnitude entry positive).
    """

    components: np.ndarray        # [N_b, H_f, W_f]
    basis: np.ndarray             # [N_b, N_c]
    mean: np.ndarray              # [N_c]
    t: int = 0
    explained_variance: np.ndarray = None
    degenerate: bool = False


def fit_pca(keys, n_components: int, t: int = 0) -> PrincipalComponents:
    """PCA over spatial positions (samples) of channel vectors (dimensions).

    Implemented via SVD of the centered data matrix; the dense covariance
    eigendecomposition serves as the independent test oracle.
    """
    keys = _to_numpy(keys).astype(np.float64)
    if keys.ndim != 3:
        raise ContractError(f"keys must be [N_c, H, W], got shape {keys.shape}")
    n_c, h, w = keys.shape
    n_pos = h * w
    if not np.isfinite(keys).all():
        raise ContractError("keys contain non-finite values")
    if not 1 <= n_components <= min(n_c, n_pos):
        raise ParameterError(
            f"n_components={n_components} must be in 1..min({n_c}, {n_pos})"
        )
    x = keys.reshape(n_c, n_pos).T
    mean = x.mean(axis=0)
    xc = x - mean
    trace = float((xc**2).sum()) / n_pos
    if trace == 0.0:
        basis = np.eye(n_c, dtype=np.float64)[:n_components]
        return PrincipalComponents(
            components=np.zeros((n_components, h, w)),
            basis=basis,
            mean=mean,
            t=t,
            explained_variance=np.zeros(n_components),
            degenerate=True,
        )
    _, svals, vt = np.linalg.svd(xc, full_matrices=False)
    eigvals = np.zeros(n_components, dtype=np.float64)
    m = min(n_components, len(svals))
    eigvals[:m] = (svals[:m] ** 2) / n_pos
    basis = np.zeros((n_components, n_c), dtype=np.float64)
    basis[:m] = vt[:m]
    if m < n_components:
        # pad with canonical rows; their components are zero anyway
        basis[m:] = np.eye(n_c)[: n_components - m]
    # deterministic sign convention
    for i in range(n_components):
        j = int(np.argmax(np.abs(basis[i])))
        if basis[i, j] < 0:
            basis[i] = -basis[i]
    coords = xc @ basis.T
    components = coords.T.reshape(n_components, h, w)
    dead = eigvals < _RANK_CUTOFF * trace
    components[dead] = 0.0
    eigvals[dead] = 0.0
    return PrincipalComponents(
        components=components,
        basis=basis,
        mean=mean,
        t=t,
        explained_variance=eigvals,
        degenerate=False,
    )


def project_onto(pc: PrincipalComponents, keys) -> np.ndarray:
    """Coordinates of (keys - stored mean) in the stored basis."""
    keys = _to_numpy(keys).astype(np.float64)
    n_b, n_c = pc.basis.shape
    if keys.ndim != 3 or keys.shape[0] != n_c:
        raise ContractError(
            f"keys shape {keys.shape} incompatible with basis channel count {n_c}"
        )
    _, h, w = keys.shape
    xc = keys.reshape(n_c, h * w).T - pc.mean
    return (xc @ pc.basis.T).T.reshape(n_b, h, w)


def project_onto_torch(pc: PrincipalComponents, keys: torch.Tensor) -> torch.Tensor:
    """Differentiable analog of :func:`project_onto` for guidance closures."""
    n_b, n_c = pc.basis.shape
    if keys.dim() != 3 or keys.shape[0] != n_c:
        raise ContractError(
            f"keys shape {tuple(keys.shape)} incompatible with basis channel count {n_c}"
        )
    basis = torch.as_tensor(pc.basis, dtype=keys.dtype, device=keys.device)
    mean = torch.as_tensor(pc.mean, dtype=keys.dtype, device=keys.device)
    centered = keys - mean[:, None, None]
    return torch.einsum("bc,chw->bhw", basis, centered)


@dataclass
class StoreEntry:
    pca: PrincipalComponents
    prototype: np.ndarray         # [N_b, H_f, W_f], components restricted by the mask
    mask: np.ndarray              # [H_f, W_f] boolean


@dataclass
class PrototypeStore:
    """Per-step prototypes for the guided steps 1..n_p plus the run config."""

    n_p: int
    entries: dict = field(default_factory=dict)   # step t -> StoreEntry
    config: dict = field(default_factory=dict)

    def entry(self, t: int) -> StoreEntry:
        from .errors import IncompleteStoreError

        if t not in self.entries:
            raise IncompleteStoreError(f"prototype store has no entry for step {t}")
        return self.entries[t]

    def validate(self) -> None:
        from .errors import IncompleteStoreError

        missing = [t for t in range(1, self.n_p + 1) if t not in self.entries]
        if missing:
            raise IncompleteStoreError(f"store missing steps {missing}")
        grids = {e.mask.shape for e in self.entries.values()}
        if len(grids) > 1:
            raise ContractError(f"inconsistent mask grids in store: {grids}")


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def save_prototype_store(path, store: PrototypeStore, extra_manifest=None, extra_arrays=None):
    """Serialize a store (plus optional pipeline payload) to a container file."""
    store.validate()
    any_entry = store.entry(1) if store.n_p >= 1 else None
    manifest = {
        "kind": "prototype_store",
        "version": STORE_VERSION,
        "n_p": store.n_p,
        "n_b": int(any_entry.prototype.shape[0]) if any_entry else 0,
        "grid": list(any_entry.mask.shape) if any_entry else [0, 0],
        "config": store.config,
        "config_hash": config_hash(store.config),
        "steps": sorted(store.entries),
    }
    if extra_manifest:
        manifest.update(extra_manifest)
    arrays = {}
    for t, entry in store.entries.items():
        arrays[f"components_{t:04d}"] = entry.pca.components
        arrays[f"basis_{t:04d}"] = entry.pca.basis
        arrays[f"mean_{t:04d}"] = entry.pca.mean
        arrays[f"explained_{t:04d}"] = entry.pca.explained_variance
        arrays[f"prototype_{t:04d}"] = entry.prototype
        arrays[f"mask_{t:04d}"] = entry.mask.astype(np.uint8)
    if extra_arrays:
        arrays.update(extra_arrays)
    write_container(path, manifest, arrays)


def load_prototype_store(path):
    """Load a store file; returns (store, manifest, extra_arrays)."""
    manifest, arrays = read_container(path)
    if manifest.get("kind") != "prototype_store":
        raise ContractError(f"{path} is not a prototype store")
    if manifest.get("version") != STORE_VERSION:
        raise ContractError(f"unsupported store version {manifest.get('version')}")
    store = PrototypeStore(n_p=manifest["n_p"], config=manifest.get("config", {}))
    consumed = set()
    for t in manifest["steps"]:
        names = {
            key: f"{key}_{t:04d}"
            for key in ("components", "basis", "mean", "explained", "prototype", "mask")
        }
        consumed.update(names.values())
        store.entries[t] = StoreEntry(
            pca=PrincipalComponents(
                components=arrays[names["components"]],
                basis=arrays[names["basis"]],
                mean=arrays[names["mean"]],
                t=t,
                explained_variance=arrays[names["explained"]],
            ),
            prototype=arrays[names["prototype"]],
            mask=arrays[names["mask"]].astype(bool),
        )
    extras = {k: v for k, v in arrays.items() if k not in consumed}
    store.validate()
    return store, manifest, extras


def _to_numpy(arr):
    if isinstance(arr, torch.Tensor):
        return arr.detach().cpu().numpy()
    return np.asarray(arr)
