"""Bit-exact binary serialization of network weights.

File layout (all integers little-endian):

    magic   "LISW" (4 bytes)
    u32     format version (currently 1)
    u32     tensor count
    per tensor:
        u16     name length, then UTF-8 name
        u8      dtype tag (0 = float32)
        u8      rank
        u32[r]  dims
        raw little-endian float32 payload

The file is parsed fully into memory and validated before any weights object
is constructed, so a corrupt file never yields a partial load.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import WeightFileError
from .network import NetworkSpec, NetworkWeights, validate_weights

MAGIC = b"LISW"
VERSION = 1
_DTYPE_F32 = 0


def save_weights(weights: NetworkWeights, path) -> None:
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<II", VERSION, len(weights.tensors))
    for name, tensor in weights.tensors.items():
        if tensor.dtype != np.float32:
            raise WeightFileError(f"tensor {name} is {tensor.dtype}, expected float32")
        encoded = name.encode("utf-8")
        blob += struct.pack("<H", len(encoded)) + encoded
        blob += struct.pack("<BB", _DTYPE_F32, tensor.ndim)
        blob += struct.pack(f"<{tensor.ndim}I", *tensor.shape)
        blob += np.ascontiguousarray(tensor, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(bytes(blob))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise WeightFileError(f"truncated weight file while reading {what}")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def load_weights(path, spec: NetworkSpec | None = None) -> NetworkWeights:
    """Load weights; if *spec* is given, names and shapes are validated against it."""
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise WeightFileError(f"cannot read weight file {path}: {exc}") from exc

    r = _Reader(data)
    if r.take(4, "magic") != MAGIC:
        raise WeightFileError(f"{path}: bad magic, not a weight file")
    (version, count) = r.unpack("<II", "header")
    if version != VERSION:
        raise WeightFileError(f"{path}: unsupported format version {version}")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H", "name length")
        name = r.take(name_len, "name").decode("utf-8")
        (dtype_tag, rank) = r.unpack("<BB", f"{name} header")
        if dtype_tag != _DTYPE_F32:
            raise WeightFileError(f"{path}: tensor {name} has unknown dtype tag {dtype_tag}")
        dims = r.unpack(f"<{rank}I", f"{name} dims")
        n_values = int(np.prod(dims)) if rank else 1
        payload = r.take(4 * n_values, f"{name} payload")
        tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).astype(
            np.float32
        )
    if r.pos != len(data):
        raise WeightFileError(f"{path}: {len(data) - r.pos} trailing bytes")
    weights = NetworkWeights(tensors)
    if spec is not None:
        validate_weights(spec, weights)
    return weights
