"""Seeded mini-batch SGD with a linear learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ParameterError, TrainingError
from . import ops
from .network import NetworkParams, backward, forward


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer settings; the learning rate decays linearly per epoch."""

    lr_start: float = 0.002
    lr_end: float = 0.0001
    epochs: int = 20
    batch_size: int = 128
    seed: int = 0

    def __post_init__(self):
        if not self.lr_start >= self.lr_end > 0:
            raise ParameterError("need lr_start >= lr_end > 0")
        if self.epochs < 1:
            raise ParameterError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ParameterError("batch_size must be >= 1")


def epoch_lr(cfg: TrainConfig, epoch: int) -> float:
    """Linear decay from lr_start (epoch 0) to lr_end (last epoch)."""
    if cfg.epochs == 1:
        return cfg.lr_start
    return cfg.lr_start + (cfg.lr_end - cfg.lr_start) * epoch / (cfg.epochs - 1)


def sgd_train(params: NetworkParams, x: np.ndarray, t: np.ndarray, cfg: TrainConfig):
    """Train on labeled samples; returns (new params, per-epoch mean loss).

    Samples are reshuffled each epoch with a generator seeded from
    ``cfg.seed``, so a fixed seed gives a bit-identical weight trajectory.
    The input params are not modified.
    """
    if len(x) == 0:
        raise TrainingError("training data is empty")
    if len(x) != len(t):
        raise ParameterError(f"{len(x)} samples but {len(t)} labels")
    params = params.copy()
    t = np.asarray(t, dtype=np.intp)
    rng = np.random.default_rng(cfg.seed)
    losses = []
    for epoch in range(cfg.epochs):
        lr = epoch_lr(cfg, epoch)
        order = rng.permutation(len(x))
        total = 0.0
        for start in range(0, len(x), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            logits, caches = forward(params, x[idx], keep_caches=True)
            loss, _, glogits = ops.softmax_xent(logits, t[idx])
            total += float(loss.sum())
            grads = backward(params, caches, glogits / len(idx))
            for tensors, grad in zip(params.tensors, grads):
                if grad is None:
                    continue
                w, b = tensors
                w -= (lr * grad[0]).astype(w.dtype, copy=False)
                b -= (lr * grad[1]).astype(b.dtype, copy=False)
        losses.append(total / len(x))
    return params, losses
