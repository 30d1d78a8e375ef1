"""Defender-side post-processing of a published carrier: pruning and fine-tuning."""

import numpy as np

from .nn import KINDS, ParamKind, loss_and_grad, make_optimizer, optimizer_step
from .trainer import BatchStream


def prune_weights(model, beta):
    """Zero the ``floor(beta * n)`` smallest-magnitude weights of every layer.

    Ties go to the lower flat index. Biases are left alone.
    """
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must be in [0, 1], got {beta}")
    out = model.copy()
    w = out.params[ParamKind.WEIGHT]
    for sl in model.spec.weight_slices():
        layer = w[sl]
        k = int(np.floor(beta * layer.size))
        if k == 0:
            continue
        # stable sort keeps index order among equal magnitudes
        order = np.argsort(np.abs(layer), kind="stable")
        layer[order[:k]] = 0.0
    return out


def frozen_mask(spec, k_last):
    """Per-kind boolean masks, True where a parameter belongs to the first H-K layers."""
    h = spec.n_layers
    if not 1 <= k_last <= h:
        raise ValueError(f"K must be in [1, {h}], got {k_last}")
    masks = {kind: np.zeros(n, dtype=bool) for kind, n in spec.counts().items()}
    for idx, (ws, bs) in enumerate(zip(spec.weight_slices(), spec.bias_slices())):
        if idx < h - k_last:
            masks[ParamKind.WEIGHT][ws] = True
            masks[ParamKind.BIAS][bs] = True
    return masks


def finetune_last_k(model, dataset, k_last, steps, optimizer=None, batch_size=64, seed=0):
    """Train only the last ``k_last`` layers for ``steps`` mini-batch steps."""
    masks = frozen_mask(model.spec, k_last)
    state = make_optimizer(optimizer or {"kind": "sgd", "lr": 0.1})
    stream = BatchStream(dataset, batch_size, seed)
    frozen = {kind: model.params[kind][masks[kind]].copy() for kind in KINDS}
    for _ in range(steps):
        X, y = stream.next()
        _, grads = loss_and_grad(model, X, y)
        for kind in KINDS:
            grads[kind][masks[kind]] = 0.0
        model, state = optimizer_step(state, model, grads)
        for kind in KINDS:
            model.params[kind][masks[kind]] = frozen[kind]
    return model if steps else model.copy()
