"""Binary array container with a JSON sidecar.

Container layout (little-endian)::

    magic  b"MFCT"  | uint32 version | uint32 n_arrays
    per array: uint32 name_len | name (utf-8) | 1 byte dtype code ('f' float64,
               'i' int64) | uint32 ndim | ndim x uint64 dims | row-major data

The sidecar ``<path>.json`` holds the metadata dict (spec fields, hashes, ...).
Round trips are bitwise.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Dict, Tuple, Union

import numpy as np

MAGIC = b"MFCT"
VERSION = 1
_DTYPES = {b"f": np.dtype("<f8"), b"i": np.dtype("<i8")}

PathLike = Union[str, Path]


def sidecar_path(path: PathLike) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def write_container(path: PathLike, arrays: Dict[str, np.ndarray], meta: dict) -> None:
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(arrays)))
        for name, arr in arrays.items():
            arr = np.asarray(arr)
            if np.issubdtype(arr.dtype, np.integer):
                code, arr = b"i", arr.astype("<i8")
            else:
                code, arr = b"f", arr.astype("<f8")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(code)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(np.ascontiguousarray(arr).tobytes(order="C"))
    with open(sidecar_path(path), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)


def read_container(path: PathLike) -> Tuple[Dict[str, np.ndarray], dict]:
    path = Path(path)
    arrays = {}
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ValueError(f"{path}: not a metafors container")
        version, n_arrays = struct.unpack("<II", fh.read(8))
        if version != VERSION:
            raise ValueError(f"{path}: unsupported container version {version}")
        for _ in range(n_arrays):
            (name_len,) = struct.unpack("<I", fh.read(4))
            name = fh.read(name_len).decode("utf-8")
            dtype = _DTYPES[fh.read(1)]
            (ndim,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{ndim}Q", fh.read(8 * ndim))
            count = int(np.prod(shape)) if ndim else 1
            buf = fh.read(count * dtype.itemsize)
            arrays[name] = np.frombuffer(buf, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))
    with open(sidecar_path(path)) as fh:
        meta = json.load(fh)
    return arrays, meta


def array_digest(*arrays: np.ndarray) -> str:
    h = hashlib.sha256()
    for arr in arrays:
        arr = np.ascontiguousarray(arr)
        h.update(str(arr.shape).encode())
        h.update(arr.tobytes())
    return h.hexdigest()[:16]
