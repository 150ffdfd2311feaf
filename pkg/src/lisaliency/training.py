"""Desk-scale SGD training so a genuinely learned classifier exists.

Plain mini-batch SGD with momentum on the mean cross-entropy.  Training is
single-threaded and fully seeded: initialization, shuffling, and updates are
deterministic, so a fixed seed reproduces the final weights bit-exactly on
one machine.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import GradientTape, backward
from .errors import DatasetError, TrainingDivergedError
from .network import (NetworkSpec, NetworkWeights, build_tape_forward,
                      init_weights, validate_weights)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.02
    epochs: int = 10
    batch_size: int = 32
    seed: int = 7
    momentum: float = 0.9


def train(spec: NetworkSpec, images: np.ndarray, labels: np.ndarray,
          cfg: TrainConfig, start: NetworkWeights | None = None,
          log=None):
    """Train on preprocessed images (N,3,H,W) with integer labels (N,).

    Returns ``(weights, loss_curve)`` where the curve holds per-epoch mean
    loss.  Aborts with :class:`TrainingDivergedError` the moment a batch loss
    goes non-finite.
    """
    images = np.asarray(images, dtype=np.float32)
    labels = np.asarray(labels)
    if images.ndim != 4 or images.shape[0] == 0:
        raise DatasetError(f"expected a nonempty (N,C,H,W) image array, got {images.shape}")
    if labels.shape != (images.shape[0],):
        raise DatasetError("labels must be one integer per image")
    if labels.min() < 0 or labels.max() >= spec.num_classes:
        raise DatasetError(
            f"labels must be in [0, {spec.num_classes}), got "
            f"[{labels.min()}, {labels.max()}]"
        )

    if start is None:
        weights = init_weights(spec, cfg.seed).deep_copy()
    else:
        validate_weights(spec, start)
        weights = start.deep_copy()
    velocity = {name: np.zeros_like(t) for name, t in weights.tensors.items()}
    rng = np.random.default_rng(cfg.seed)
    n = images.shape[0]
    curve: list[float] = []

    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        epoch_loss = 0.0
        for lo in range(0, n, cfg.batch_size):
            idx = perm[lo : lo + cfg.batch_size]
            xb, yb = images[idx], labels[idx]
            tape = GradientTape()
            param_ids = {name: tape.leaf(t) for name, t in weights.tensors.items()}
            x_id = tape.leaf(xb)
            _, logits_id, _ = build_tape_forward(tape, spec, weights, x_id, param_ids,
                                                 with_softmax=False)
            loss_id = tape.cross_entropy(logits_id, yb)
            loss = float(tape.value(loss_id))
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"loss became non-finite at epoch {epoch}, batch offset {lo}"
                )
            grads = backward(tape, loss_id)
            for name, pid in param_ids.items():
                v = velocity[name]
                v *= cfg.momentum
                v += grads[pid]
                weights.tensors[name] -= np.float32(cfg.lr) * v
            epoch_loss += loss * len(idx)
        curve.append(epoch_loss / n)
        if log is not None:
            log(epoch, curve[-1])
    return weights, curve


def evaluate(spec: NetworkSpec, weights: NetworkWeights, images: np.ndarray,
             labels: np.ndarray, k: int = 1) -> float:
    """Top-k accuracy of the classifier on preprocessed images."""
    from .network import forward, top_k_indices

    hits = 0
    for image, label in zip(images, labels):
        probs = forward(spec, weights, image)
        hits += int(label) in top_k_indices(probs, k)
    return hits / len(images)
