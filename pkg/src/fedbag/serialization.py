"""Binary formats for feature bags and model checkpoints.

Bag file::

    b"FBAG1" | u32 M | u32 d_in | M*d_in f32 (little-endian, row-major)

Checkpoint::

    b"FBAG" | u32 version | u32 n_tensors
    n_tensors x ( u32 name_len | name (utf-8) | u32 rank | rank x u64 dim | payload )
    [u64 adam_t]                      -- present iff any tensor name ends in ".m"

Version 1 stores payloads as f32, version 2 as f64. Optimizer moments are
stored as extra tensors named ``<weight>.m`` / ``<weight>.v``.
"""

from __future__ import annotations

import os
import struct
from typing import Dict, Optional, Tuple

import numpy as np

from .model import PARAM_NAMES, ModelWeights

BAG_MAGIC = b"FBAG1"
CKPT_MAGIC = b"FBAG"
CKPT_F32 = 1
CKPT_F64 = 2
_DTYPES = {CKPT_F32: np.dtype("<f4"), CKPT_F64: np.dtype("<f8")}


class BagFormatError(ValueError):
    """Header or size mismatch in a bag or checkpoint file."""


class NonFiniteBagError(ValueError):
    """A bag file decodes to NaN or infinite values."""


def save_bag(features, path) -> None:
    X = np.asarray(features)
    if X.ndim != 2 or X.shape[0] < 1:
        raise ValueError(f"bag must be a non-empty 2-D array, got shape {X.shape}")
    payload = np.ascontiguousarray(X, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(BAG_MAGIC)
        fh.write(struct.pack("<II", X.shape[0], X.shape[1]))
        fh.write(payload.tobytes())


def load_bag(path) -> np.ndarray:
    """Read a bag file; returns a float32 ``(M, d_in)`` array."""
    path = os.fspath(path)
    with open(path, "rb") as fh:
        raw = fh.read()
    head = len(BAG_MAGIC) + 8
    if len(raw) < head or raw[: len(BAG_MAGIC)] != BAG_MAGIC:
        raise BagFormatError(f"{path}: not a bag file (bad magic or truncated header)")
    M, d = struct.unpack_from("<II", raw, len(BAG_MAGIC))
    expected = head + 4 * M * d
    if len(raw) != expected:
        raise BagFormatError(f"{path}: header says {M}x{d} ({expected} bytes) but file has {len(raw)} bytes")
    if M == 0:
        raise BagFormatError(f"{path}: empty bag (M=0)")
    X = np.frombuffer(raw, dtype="<f4", offset=head).reshape(M, d).astype(np.float32)
    if not np.all(np.isfinite(X)):
        raise NonFiniteBagError(f"{path}: payload contains non-finite values")
    return X


def _write_tensor(fh, name: str, arr: np.ndarray, dtype: np.dtype) -> None:
    encoded = name.encode("utf-8")
    fh.write(struct.pack("<I", len(encoded)))
    fh.write(encoded)
    fh.write(struct.pack("<I", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    fh.write(np.ascontiguousarray(arr, dtype=dtype).tobytes())


def save_checkpoint(path, weights: ModelWeights, optimizer_state: Optional[dict] = None, version: int = CKPT_F32) -> None:
    """Write weights (and optionally Adam moments + step count)."""
    if version not in _DTYPES:
        raise ValueError(f"unknown checkpoint version {version}")
    dtype = _DTYPES[version]
    tensors = list(weights.items())
    if optimizer_state is not None:
        for name in weights:
            tensors.append((f"{name}.m", optimizer_state["m"].get(name, np.zeros_like(weights[name]))))
            tensors.append((f"{name}.v", optimizer_state["v"].get(name, np.zeros_like(weights[name]))))
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<II", version, len(tensors)))
        for name, arr in tensors:
            _write_tensor(fh, name, np.asarray(arr), dtype)
        if optimizer_state is not None:
            fh.write(struct.pack("<Q", int(optimizer_state["t"])))


class _Reader:
    def __init__(self, raw: bytes, path: str):
        self.raw, self.pos, self.path = raw, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise BagFormatError(f"{self.path}: truncated checkpoint at byte {self.pos}")
        out = self.raw[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path) -> Tuple[ModelWeights, Optional[dict]]:
    """Return ``(weights, optimizer_state_or_None)`` as float64 arrays."""
    path = os.fspath(path)
    with open(path, "rb") as fh:
        raw = fh.read()
    r = _Reader(raw, path)
    if r.take(len(CKPT_MAGIC)) != CKPT_MAGIC:
        raise BagFormatError(f"{path}: not a checkpoint (bad magic)")
    version, count = r.unpack("<II")
    if version not in _DTYPES:
        raise BagFormatError(f"{path}: unsupported checkpoint version {version}")
    dtype = _DTYPES[version]
    tensors: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = r.unpack("<I")
        name = r.take(name_len).decode("utf-8")
        (rank,) = r.unpack("<I")
        shape = r.unpack(f"<{rank}Q") if rank else ()
        n = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(r.take(n * dtype.itemsize), dtype=dtype).reshape(shape)
        tensors[name] = arr.astype(np.float64)
    has_opt = any(name.endswith(".m") for name in tensors)
    t = r.unpack("<Q")[0] if has_opt else None
    if r.pos != len(raw):
        raise BagFormatError(f"{path}: {len(raw) - r.pos} trailing bytes")

    weights = {name: tensors[name] for name in PARAM_NAMES if name in tensors}
    if tuple(weights) != PARAM_NAMES:
        missing = [n for n in PARAM_NAMES if n not in tensors]
        raise BagFormatError(f"{path}: missing tensors {missing}")
    state = None
    if has_opt:
        state = {
            "m": {n: tensors[f"{n}.m"] for n in PARAM_NAMES},
            "v": {n: tensors[f"{n}.v"] for n in PARAM_NAMES},
            "t": t,
        }
    return weights, state
