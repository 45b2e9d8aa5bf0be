"""Versioned binary weight files.

Layout (all integers little-endian):

    magic   b"SSNW"
    u32     format version (1)
    u64     rng seed used at init
    u32     length of the canonical architecture JSON
    bytes   architecture JSON (utf-8)
    32B     sha256 of the architecture JSON (the fingerprint)
    u32     tensor count
    per tensor: u8 ndim, u32 per dim, float32 little-endian payload

Loading verifies the embedded fingerprint and reconstructs the layer
specs, so a weight file is self-describing.
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from ..errors import IncompatibleArchitectureError, WeightFormatError
from .network import LayerSpec, NetworkParams, fingerprint

MAGIC = b"SSNW"
VERSION = 1


def save_params(params: NetworkParams) -> bytes:
    from .network import architecture_json

    arch = architecture_json(params.specs, params.input_shape).encode("utf-8")
    out = [MAGIC, struct.pack("<IQ", VERSION, params.rng_seed)]
    out.append(struct.pack("<I", len(arch)))
    out.append(arch)
    out.append(hashlib.sha256(arch).digest())
    flat = [a for t in params.tensors if t is not None for a in t]
    out.append(struct.pack("<I", len(flat)))
    for arr in flat:
        out.append(struct.pack("<B", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.astype("<f4").tobytes())
    return b"".join(out)


def _spec_from_dict(d: dict) -> LayerSpec:
    kind = d["kind"]
    if kind in ("conv2d", "conv3d"):
        return LayerSpec(kind, filters=d["filters"], kernel=tuple(d["kernel"]), stride=tuple(d["stride"]))
    if kind == "maxpool":
        return LayerSpec(kind, kernel=tuple(d["kernel"]), stride=tuple(d["stride"]))
    if kind == "fc":
        return LayerSpec(kind, width=d["width"])
    return LayerSpec(kind)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise WeightFormatError(
                f"weight file truncated at offset {self.pos}: need {n} more bytes"
            )
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_params(data: bytes) -> NetworkParams:
    """Parse a weight file; raises on truncation or fingerprint mismatch."""
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise WeightFormatError("not a weight file (bad magic)")
    version, seed = r.unpack("<IQ")
    if version != VERSION:
        raise WeightFormatError(f"unsupported weight file version {version}")
    (arch_len,) = r.unpack("<I")
    arch = r.take(arch_len)
    stored_fp = r.take(32)
    if hashlib.sha256(arch).digest() != stored_fp:
        raise IncompatibleArchitectureError("architecture fingerprint mismatch (corrupt file)")

    desc = json.loads(arch.decode("utf-8"))
    specs = tuple(_spec_from_dict(d) for d in desc["layers"])
    input_shape = tuple(desc["input"])
    if fingerprint(specs, input_shape) != stored_fp.hex():
        raise IncompatibleArchitectureError("architecture description does not round-trip")

    (count,) = r.unpack("<I")
    flat = []
    for _ in range(count):
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I")
        n = int(np.prod(shape)) if ndim else 1
        payload = r.take(4 * n)
        flat.append(np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float32))

    tensors = []
    it = iter(flat)
    for spec in specs:
        if spec.kind in ("conv2d", "conv3d", "fc"):
            try:
                w = next(it)
                b = next(it)
            except StopIteration:
                raise WeightFormatError("weight file holds fewer tensors than the architecture needs")
            tensors.append((w, b))
        else:
            tensors.append(None)
    return NetworkParams(specs, input_shape, tensors, rng_seed=seed)
