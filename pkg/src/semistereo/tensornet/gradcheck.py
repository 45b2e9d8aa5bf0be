"""Finite-difference verification of the backward passes."""

from __future__ import annotations

import numpy as np

from . import ops
from .network import NetworkParams, backward, forward


def _loss_and_pattern(params: NetworkParams, x: np.ndarray, t: np.ndarray):
    """Mean loss plus the piecewise-linearity pattern (relu signs, pool argmaxes).

    Central differences are only valid where the network is smooth; a probe
    whose +-h evaluations land on different linear pieces measures the kink,
    not the gradient, and must be discarded.
    """
    logits, caches = forward(params, x, keep_caches=True)
    loss, _, _ = ops.softmax_xent(logits, t)
    parts = []
    for spec, cache in zip(params.specs, caches):
        if spec.kind == "relu":
            parts.append((cache > 0).tobytes())
        elif spec.kind == "maxpool":
            parts.append(cache[1].tobytes())
    return float(loss.mean()), b"".join(parts)


def grad_check(
    params: NetworkParams,
    x: np.ndarray,
    t: np.ndarray,
    per_tensor: int = 50,
    h: float = 1e-5,
    seed: int = 0,
) -> float:
    """Worst relative error between analytic and central-difference gradients.

    Promotes everything to float64 and probes a seeded random subset of at
    least ``per_tensor`` entries of every weight tensor (plus up to 10 bias
    entries).  Probes that cross a relu/pool kink are resampled; the
    relative-error denominator is floored at 1e-6 so parameters with a
    vanishing true gradient do not register spurious failures.
    """
    params = params.astype(np.float64)
    x = np.asarray(x, dtype=np.float64)
    t = np.asarray(t, dtype=np.intp)
    rng = np.random.default_rng(seed)

    logits, caches = forward(params, x, keep_caches=True)
    _, _, glogits = ops.softmax_xent(logits, t)
    grads = backward(params, caches, glogits / len(x))
    _, base_pattern = _loss_and_pattern(params, x, t)

    worst = 0.0
    for tensors, grad in zip(params.tensors, grads):
        if tensors is None:
            continue
        for arr, analytic, budget in ((tensors[0], grad[0], per_tensor), (tensors[1], grad[1], 10)):
            flat = arr.reshape(-1)
            aflat = analytic.reshape(-1)
            n = min(flat.size, budget)
            order = rng.permutation(flat.size)
            clean = 0
            for i in order:
                if clean >= n:
                    break
                orig = flat[i]
                flat[i] = orig + h
                up, pat_up = _loss_and_pattern(params, x, t)
                flat[i] = orig - h
                down, pat_down = _loss_and_pattern(params, x, t)
                flat[i] = orig
                if pat_up != base_pattern or pat_down != base_pattern:
                    continue
                clean += 1
                numeric = (up - down) / (2 * h)
                err = abs(numeric - aflat[i]) / max(abs(numeric), abs(aflat[i]), 1e-6)
                worst = max(worst, err)
    return worst
