"""Layer specifications, parameter containers, and network passes."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import ParameterError, ShapeError
from . import ops

_KINDS = ("conv2d", "conv3d", "maxpool", "fc", "relu")


@dataclass(frozen=True)
class LayerSpec:
    """One layer of a feed-forward stack.

    Kernel and stride tuples are ordered (height, width, depth) to match
    the conventional "3x3x2, stride 1x1x2" notation; depth is the axis the
    3-D convolutions group channels over.
    """

    kind: str
    filters: int = 0
    kernel: tuple[int, int, int] = (0, 0, 0)
    stride: tuple[int, int, int] = (1, 1, 1)
    width: int = 0  # fc output width

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ParameterError(f"unknown layer kind {self.kind!r}")
        if self.kind in ("conv2d", "conv3d"):
            if self.filters < 1:
                raise ParameterError("conv layer needs a positive filter count")
            if min(self.kernel) < 1 or min(self.stride) < 1:
                raise ParameterError("conv kernel and stride must be positive")
            if self.kind == "conv2d" and (self.kernel[2] != 1 or self.stride[2] != 1):
                raise ParameterError("conv2d must have kernel depth 1 and stride depth 1")
        elif self.kind == "maxpool":
            if min(self.kernel[:2]) < 1 or min(self.stride[:2]) < 1:
                raise ParameterError("maxpool window and stride must be positive")
            if self.kernel[2] != 1 or self.stride[2] != 1:
                raise ParameterError("maxpool operates on spatial axes only (depth window 1)")
        elif self.kind == "fc":
            if self.width < 1:
                raise ParameterError("fc layer carries only a positive output width")

    def _canonical(self) -> dict:
        if self.kind in ("conv2d", "conv3d"):
            return {
                "kind": self.kind,
                "filters": self.filters,
                "kernel": list(self.kernel),
                "stride": list(self.stride),
            }
        if self.kind == "maxpool":
            return {"kind": self.kind, "kernel": list(self.kernel), "stride": list(self.stride)}
        if self.kind == "fc":
            return {"kind": self.kind, "width": self.width}
        return {"kind": self.kind}

    def _dhw_kernel(self):
        kh, kw, kd = self.kernel
        return kd, kh, kw

    def _dhw_stride(self):
        sh, sw, sd = self.stride
        return sd, sh, sw


def architecture_json(specs, input_shape) -> str:
    """Canonical JSON description of an architecture (fingerprint input)."""
    return json.dumps(
        {"input": list(input_shape), "layers": [s._canonical() for s in specs]},
        sort_keys=True,
        separators=(",", ":"),
    )


def fingerprint(specs, input_shape) -> str:
    return hashlib.sha256(architecture_json(specs, input_shape).encode("ascii")).hexdigest()


def trace_shapes(specs, input_shape) -> list:
    """Shapes after each layer; (c, d, h, w) tuples, or an int once flattened."""
    shape = tuple(input_shape)
    if len(shape) != 4:
        raise ShapeError(f"input shape must be (channels, depth, height, width), got {shape}")
    out = []
    for spec in specs:
        if isinstance(shape, int):
            if spec.kind == "fc":
                shape = spec.width
            elif spec.kind == "relu":
                pass
            else:
                raise ShapeError(f"{spec.kind} layer after flatten is not supported")
        elif spec.kind in ("conv2d", "conv3d"):
            c, d, h, w = shape
            kd, kh, kw = spec._dhw_kernel()
            sd, sh, sw = spec._dhw_stride()
            shape = (
                spec.filters,
                ops._out_len(d, kd, sd, "depth", exact=True),
                ops._out_len(h, kh, sh, "height", exact=True),
                ops._out_len(w, kw, sw, "width", exact=True),
            )
        elif spec.kind == "maxpool":
            c, d, h, w = shape
            kh, kw = spec.kernel[:2]
            sh, sw = spec.stride[:2]
            shape = (
                c,
                d,
                ops._out_len(h, kh, sh, "height", exact=False),
                ops._out_len(w, kw, sw, "width", exact=False),
            )
        elif spec.kind == "fc":
            shape = spec.width
        out.append(shape)
    return out


def flatten_width(specs, input_shape) -> int:
    """Width seen by the first fully connected layer."""
    shape = tuple(input_shape)
    for spec, traced in zip(specs, trace_shapes(specs, input_shape)):
        if spec.kind == "fc":
            return int(np.prod(shape)) if not isinstance(shape, int) else shape
        shape = traced
    raise ShapeError("architecture has no fc layer")


@dataclass
class NetworkParams:
    """Weights and biases for one architecture, plus its identity.

    ``tensors`` holds one (weights, bias) pair per conv/fc layer and None
    for parameterless layers, aligned with ``specs``.
    """

    specs: tuple
    input_shape: tuple
    tensors: list
    rng_seed: int
    fingerprint: str = field(default="")

    def __post_init__(self):
        self.specs = tuple(self.specs)
        self.input_shape = tuple(self.input_shape)
        expected = fingerprint(self.specs, self.input_shape)
        if not self.fingerprint:
            self.fingerprint = expected
        elif self.fingerprint != expected:
            raise ParameterError("fingerprint does not match the layer specs")
        for spec, t in zip(self.specs, self.tensors):
            if spec.kind in ("conv2d", "conv3d", "fc"):
                if t is None:
                    raise ParameterError(f"{spec.kind} layer is missing tensors")
                w, b = t
                if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                    raise ParameterError("parameters must be finite")
            elif t is not None:
                raise ParameterError(f"{spec.kind} layer carries no tensors")

    @property
    def dtype(self):
        for t in self.tensors:
            if t is not None:
                return t[0].dtype
        raise ParameterError("network has no parameters")

    def astype(self, dtype) -> "NetworkParams":
        tensors = [
            None if t is None else (t[0].astype(dtype), t[1].astype(dtype))
            for t in self.tensors
        ]
        return NetworkParams(self.specs, self.input_shape, tensors, self.rng_seed, self.fingerprint)

    def copy(self) -> "NetworkParams":
        tensors = [None if t is None else (t[0].copy(), t[1].copy()) for t in self.tensors]
        return NetworkParams(self.specs, self.input_shape, tensors, self.rng_seed, self.fingerprint)


def init_params(specs, input_shape, seed: int, dtype=np.float32) -> NetworkParams:
    """Seeded Glorot-uniform weights (+-sqrt(6/(fan_in+fan_out))), zero biases.

    Conv fans are per output unit (fan_in counts the receptive field,
    fan_out the filter count); folding the kernel size into fan_out as well
    shrinks the weights enough that this depth of stack stops training at
    the pinned learning-rate schedule.
    """
    rng = np.random.default_rng(seed)
    shapes = trace_shapes(specs, input_shape)
    tensors = []
    shape = tuple(input_shape)
    for spec, traced in zip(specs, shapes):
        if spec.kind in ("conv2d", "conv3d"):
            c = shape[0]
            kd, kh, kw = spec._dhw_kernel()
            fan_in = c * kd * kh * kw
            fan_out = spec.filters
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-bound, bound, size=(spec.filters, c, kd, kh, kw))
            tensors.append((w.astype(dtype), np.zeros(spec.filters, dtype=dtype)))
        elif spec.kind == "fc":
            fan_in = int(np.prod(shape)) if not isinstance(shape, int) else shape
            fan_out = spec.width
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
            tensors.append((w.astype(dtype), np.zeros(fan_out, dtype=dtype)))
        else:
            tensors.append(None)
        shape = traced
    return NetworkParams(specs, input_shape, tensors, rng_seed=seed)


def forward(params: NetworkParams, x: np.ndarray, keep_caches: bool = False):
    """Run the stack on a batch; returns (logits, caches).

    ``caches`` is None unless requested; each entry holds what the matching
    backward step needs.
    """
    if x.shape[1:] != params.input_shape:
        raise ShapeError(f"input shape {x.shape[1:]} != expected {params.input_shape}")
    caches = [] if keep_caches else None
    cur = x
    for spec, t in zip(params.specs, params.tensors):
        if spec.kind in ("conv2d", "conv3d"):
            if keep_caches:
                nxt, cols = ops.conv_forward_cached(cur, t[0], t[1], spec._dhw_stride())
                cache = (cur, cols)
            else:
                nxt = ops.conv_forward(cur, t[0], t[1], spec._dhw_stride())
                cache = None
        elif spec.kind == "maxpool":
            nxt, argmax = ops.maxpool_forward(cur, spec.kernel[:2], spec.stride[:2])
            cache = (cur.shape, argmax)
        elif spec.kind == "fc":
            nxt = ops.fc_forward(cur, t[0], t[1])
            cache = cur
        else:  # relu
            nxt = ops.relu_forward(cur)
            cache = cur
        if keep_caches:
            caches.append(cache)
        cur = nxt
    return cur, caches


def backward(params: NetworkParams, caches, glogits: np.ndarray):
    """Backpropagate through the stack; returns per-layer gradients.

    The result aligns with ``params.tensors``: (dw, db) pairs or None.
    """
    grads = [None] * len(params.specs)
    g = glogits
    for i in range(len(params.specs) - 1, -1, -1):
        spec, t, cache = params.specs[i], params.tensors[i], caches[i]
        if spec.kind in ("conv2d", "conv3d"):
            x_in, cols = cache
            g, dw, db = ops.conv_backward(x_in, t[0], g, spec._dhw_stride(), cols=cols)
            grads[i] = (dw, db)
        elif spec.kind == "maxpool":
            x_shape, argmax = cache
            g = ops.maxpool_backward(x_shape, argmax, g, spec.kernel[:2], spec.stride[:2])
        elif spec.kind == "fc":
            g, dw, db = ops.fc_backward(cache, t[0], g)
            grads[i] = (dw, db)
        else:
            g = ops.relu_backward(cache, g)
    return grads


def predict_scores(params: NetworkParams, x: np.ndarray, batch: int = 512) -> np.ndarray:
    """Softmax class-1 probability for each sample, evaluated in chunks."""
    out = np.empty(x.shape[0], dtype=np.float64)
    for start in range(0, x.shape[0], batch):
        chunk = x[start : start + batch]
        logits, _ = forward(params, chunk)
        _, s, _ = ops.softmax_xent(logits, np.zeros(len(chunk), dtype=np.intp))
        out[start : start + len(chunk)] = s
    return out
