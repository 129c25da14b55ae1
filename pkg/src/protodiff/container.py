"""Deterministic binary container: one JSON manifest plus named arrays.

Used for prototype stores and denoiser checkpoints. Unlike ``np.savez`` or
``torch.save`` the byte stream contains no timestamps, so identical content
serializes to identical bytes (required for rerun-reproducibility checks).
"""

import json
import struct

import numpy as np

from .errors import ContainerFormatError

MAGIC = b"PDCONT01"


def write_container(path, manifest: dict, arrays: dict) -> None:
    """Write ``manifest`` (JSON-serializable) and named numpy arrays to ``path``."""
    blob = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<Q", len(arrays)))
        for name in sorted(arrays):
            arr = np.ascontiguousarray(arrays[name])
            name_b = name.encode("utf-8")
            dtype_b = arr.dtype.str.encode("ascii")
            fh.write(struct.pack("<H", len(name_b)))
            fh.write(name_b)
            fh.write(struct.pack("<H", len(dtype_b)))
            fh.write(dtype_b)
            fh.write(struct.pack("<H", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<Q", dim))
            fh.write(arr.tobytes(order="C"))


def read_container(path):
    """Read a container file back into ``(manifest, arrays)``."""
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise ContainerFormatError(f"{path}: bad magic {magic!r}")
        (mlen,) = struct.unpack("<Q", _read_exact(fh, 8, path))
        manifest = json.loads(_read_exact(fh, mlen, path).decode("utf-8"))
        (count,) = struct.unpack("<Q", _read_exact(fh, 8, path))
        arrays = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", _read_exact(fh, 2, path))
            name = _read_exact(fh, nlen, path).decode("utf-8")
            (dlen,) = struct.unpack("<H", _read_exact(fh, 2, path))
            dtype = np.dtype(_read_exact(fh, dlen, path).decode("ascii"))
            (ndim,) = struct.unpack("<H", _read_exact(fh, 2, path))
            shape = tuple(
                struct.unpack("<Q", _read_exact(fh, 8, path))[0] for _ in range(ndim)
            )
            nbytes = int(dtype.itemsize * int(np.prod(shape, dtype=np.int64)))
            data = _read_exact(fh, nbytes, path)
            arrays[name] = np.frombuffer(data, dtype=dtype).reshape(shape).copy()
    return manifest, arrays


def _read_exact(fh, n, path):
    data = fh.read(n)
    if len(data) != n:
        raise ContainerFormatError(f"{path}: truncated container")
    return data
