"""Core tensor operations and their exact adjoints.

All activations are (batch, channels, depth, height, width) arrays.
Convolutions are valid (unpadded) cross-correlations; kernel and stride
tuples are ordered (depth, height, width) here.  Everything is plain numpy
so a float64 view of the same code path serves gradient checking.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError


def _out_len(n: int, k: int, s: int, axis: str, exact: bool) -> int:
    if k > n:
        raise ShapeError(f"kernel size {k} exceeds input size {n} on {axis} axis")
    if exact and (n - k) % s != 0:
        raise ShapeError(
            f"stride {s} does not tile {axis} axis: input {n}, kernel {k} "
            f"leaves remainder {(n - k) % s}"
        )
    return (n - k) // s + 1


def _im2col(x: np.ndarray, kshape, stride, oshape) -> np.ndarray:
    """Unfold conv windows to a (C*kd*kh*kw, N*od*oh*ow) matrix."""
    n, c = x.shape[:2]
    kd, kh, kw = kshape
    sd, sh, sw = stride
    od, oh, ow = oshape
    cols = np.empty((c, kd, kh, kw, n, od, oh, ow), dtype=x.dtype)
    for dz in range(kd):
        for dy in range(kh):
            for dx in range(kw):
                patch = x[
                    :,
                    :,
                    dz : dz + od * sd : sd,
                    dy : dy + oh * sh : sh,
                    dx : dx + ow * sw : sw,
                ]
                cols[:, dz, dy, dx] = patch.transpose(1, 0, 2, 3, 4)
    return cols.reshape(c * kd * kh * kw, n * od * oh * ow)


def conv_forward_cached(x: np.ndarray, weights: np.ndarray, bias: np.ndarray, stride):
    """conv_forward that also returns the unfolded column matrix.

    The columns can be fed back to conv_backward to skip recomputing the
    im2col unfold (the dominant cost for small batches).
    """
    n, c, d, h, w = x.shape
    f, cw, kd, kh, kw = weights.shape
    if cw != c:
        raise ShapeError(f"weights expect {cw} input channels, input has {c}")
    sd, sh, sw = stride
    od = _out_len(d, kd, sd, "depth", exact=True)
    oh = _out_len(h, kh, sh, "height", exact=True)
    ow = _out_len(w, kw, sw, "width", exact=True)
    cols = _im2col(x, (kd, kh, kw), (sd, sh, sw), (od, oh, ow))
    out = weights.reshape(f, -1) @ cols
    out += bias[:, None]
    # transposed view: downstream elementwise ops re-materialize it anyway
    return out.reshape(f, n, od, oh, ow).transpose(1, 0, 2, 3, 4), cols


def conv_forward(x: np.ndarray, weights: np.ndarray, bias: np.ndarray, stride) -> np.ndarray:
    """Valid cross-correlation over (depth, height, width) across channels.

    Parameters
    ----------
    x : (N, C, D, H, W) input.
    weights : (F, C, kd, kh, kw) filters.
    bias : (F,) per-filter bias.
    stride : (sd, sh, sw); every axis must tile exactly.

    Returns
    -------
    (N, F, Do, Ho, Wo) output.
    """
    return conv_forward_cached(x, weights, bias, stride)[0]


def conv_backward(x: np.ndarray, weights: np.ndarray, g: np.ndarray, stride, cols=None):
    """Adjoint of conv_forward.

    Parameters
    ----------
    x, weights, stride : as passed to the forward pass.
    g : (N, F, Do, Ho, Wo) upstream gradient.
    cols : optional column matrix from conv_forward_cached.

    Returns
    -------
    (dx, dweights, dbias), each shaped like its primal.
    """
    n, c, d, h, w = x.shape
    f = weights.shape[0]
    kd, kh, kw = weights.shape[2:]
    sd, sh, sw = stride
    od, oh, ow = g.shape[2:]
    if g.shape[:2] != (n, f):
        raise ShapeError(f"gradient shape {g.shape} inconsistent with ({n}, {f}, ...)")

    gm = np.ascontiguousarray(g.transpose(1, 0, 2, 3, 4)).reshape(f, -1)
    if cols is None:
        cols = _im2col(x, (kd, kh, kw), (sd, sh, sw), (od, oh, ow))
    dweights = (gm @ cols.T).reshape(weights.shape)
    dbias = gm.sum(axis=1)

    dcols = (weights.reshape(f, -1).T @ gm).reshape(c, kd, kh, kw, n, od, oh, ow)
    dx = np.zeros_like(x)
    for dz in range(kd):
        for dy in range(kh):
            for dx_ in range(kw):
                dx[
                    :,
                    :,
                    dz : dz + od * sd : sd,
                    dy : dy + oh * sh : sh,
                    dx_ : dx_ + ow * sw : sw,
                ] += dcols[:, dz, dy, dx_].transpose(1, 0, 2, 3, 4)
    return dx, dweights, dbias


def maxpool_forward(x: np.ndarray, window=(2, 2), stride=(2, 2)):
    """Max pooling over the spatial axes (depth untouched).

    Partial windows at the right/bottom edges are dropped.  Returns the
    pooled tensor and the argmax index map used by the backward pass (index
    of the winning (dy, dx) offset in row-major window order, first
    occurrence on ties).
    """
    n, c, d, h, w = x.shape
    kh, kw = window
    sh, sw = stride
    oh = _out_len(h, kh, sh, "height", exact=False)
    ow = _out_len(w, kw, sw, "width", exact=False)
    stacked = np.stack(
        [
            x[:, :, :, dy : dy + oh * sh : sh, dx : dx + ow * sw : sw]
            for dy in range(kh)
            for dx in range(kw)
        ]
    )
    # np.argmax takes the first maximum, which is the row-major tie rule
    argmax = stacked.argmax(axis=0).astype(np.int16)
    out = stacked.max(axis=0)
    return out, argmax


def maxpool_backward(x_shape, argmax: np.ndarray, g: np.ndarray, window=(2, 2), stride=(2, 2)) -> np.ndarray:
    """Route upstream gradient to each window's argmax position."""
    kh, kw = window
    sh, sw = stride
    oh, ow = g.shape[3:]
    dx = np.zeros(x_shape, dtype=g.dtype)
    for idx in range(kh * kw):
        dy, dx_ = divmod(idx, kw)
        target = dx[:, :, :, dy : dy + oh * sh : sh, dx_ : dx_ + ow * sw : sw]
        target += g * (argmax == idx)
    return dx


def fc_forward(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Affine map on flattened input: (N, ...) -> (N, out).

    Flatten order is (channels, depth, rows, columns), i.e. numpy C order.
    """
    flat = x.reshape(x.shape[0], -1)
    if flat.shape[1] != weights.shape[1]:
        raise ShapeError(
            f"fc expects width {weights.shape[1]}, input flattens to {flat.shape[1]}"
        )
    return flat @ weights.T + bias


def fc_backward(x: np.ndarray, weights: np.ndarray, g: np.ndarray):
    """Adjoint of fc_forward; dx is reshaped back to x's shape."""
    flat = x.reshape(x.shape[0], -1)
    dweights = g.T @ flat
    dbias = g.sum(axis=0)
    dx = (g @ weights).reshape(x.shape)
    return dx, dweights, dbias


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    return np.where(x > 0, g, 0)


def softmax_xent(logits: np.ndarray, t: np.ndarray):
    """Two-class softmax cross-entropy.

    Parameters
    ----------
    logits : (N, 2) raw scores.
    t : (N,) labels in {0, 1}.

    Returns
    -------
    (loss, s, grad) where loss is (N,) per-sample cross-entropy
    -(t log s + (1-t) log(1-s)), s is (N,) the softmax probability of
    class 1, and grad is (N, 2) the gradient of the summed loss with
    respect to the logits (softmax - onehot).
    """
    if logits.ndim != 2 or logits.shape[1] != 2:
        raise ShapeError(f"logits must be (N, 2), got {logits.shape}")
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    p = np.exp(logp)
    t = np.asarray(t, dtype=np.intp)
    loss = -logp[np.arange(len(t)), t]
    grad = p.copy()
    grad[np.arange(len(t)), t] -= 1
    return loss, p[:, 1], grad
