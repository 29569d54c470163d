"""Manual-gradient training on the pair-matching objective, plus
retrieval evaluation.

The loss is binary cross-entropy on match logits with one in-batch
negative per anchor (the batch rolled by one). Masked training pins
pruned weights to exactly zero after every update.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import MultiflowError
from .data import SyntheticPairSet
from .model import ToyVLM


class TrainingDiverged(MultiflowError):
    pass


def pair_loss_and_grads(model: ToyVLM, xv: np.ndarray, xt: np.ndarray):
    """BCE matching loss over n positive and n rolled-negative pairs."""
    n = xv.shape[0]
    cache: dict = {}
    v, t = model.embed(xv, xt, cache)
    idx = np.arange(n)
    rows_v = np.concatenate([idx, idx])
    rows_t = np.concatenate([idx, np.roll(idx, 1)])
    logits = model.fuse(v[rows_v], t[rows_t], cache)
    y = np.concatenate([np.ones(n), np.zeros(n)])
    # softplus(z) - y*z is BCE-with-logits; gradient is sigmoid(z) - y
    loss = float(np.mean(np.logaddexp(0.0, logits) - y * logits))
    sigmoid = np.exp(-np.logaddexp(0.0, -logits))
    d_logits = (sigmoid - y) / logits.size
    grads = model.backward(d_logits, cache, (rows_v, rows_t))
    return loss, grads


def pair_loss(model: ToyVLM, xv: np.ndarray, xt: np.ndarray) -> float:
    """Loss only (used by finite-difference gradient checks)."""
    n = xv.shape[0]
    v, t = model.embed(xv, xt)
    idx = np.arange(n)
    logits = model.fuse(
        v[np.concatenate([idx, idx])], t[np.concatenate([idx, np.roll(idx, 1)])]
    )
    y = np.concatenate([np.ones(n), np.zeros(n)])
    return float(np.mean(np.logaddexp(0.0, logits) - y * logits))


def retrieval_accuracy(model: ToyVLM, xv: np.ndarray, xt: np.ndarray, group: int = 32) -> float:
    """Fraction of queries whose true pair ranks first among `group` candidates.

    Queries run in both directions (text->vision and vision->text) over
    consecutive candidate blocks; ties resolve to the lowest index.
    """
    n = (xv.shape[0] // group) * group
    if n == 0:
        raise ValueError(f"need at least {group} eval pairs")
    v, t = model.embed(xv[:n], xt[:n])
    hits = 0
    total = 0
    for lo in range(0, n, group):
        vb, tb = v[lo : lo + group], t[lo : lo + group]
        grid_v = np.repeat(np.arange(group), group)
        grid_t = np.tile(np.arange(group), group)
        scores = model.fuse(vb[grid_v], tb[grid_t]).reshape(group, group)
        hits += int((scores.argmax(axis=0) == np.arange(group)).sum())  # text query
        hits += int((scores.argmax(axis=1) == np.arange(group)).sum())  # vision query
        total += 2 * group
    return hits / total


@dataclass
class TrainResult:
    model: ToyVLM
    steps: int
    lr: float
    accuracy: float
    final_loss: float
    mask: dict[str, np.ndarray] | None = None
    rng_state: dict = field(default_factory=dict)


def train(
    model: ToyVLM,
    dataset: SyntheticPairSet,
    steps: int,
    *,
    mask: dict[str, np.ndarray] | None = None,
    lr: float = 0.1,
    batch_size: int = 32,
    seed: int = 0,
    train_rows: int | None = None,
    eval_rows: int = 512,
    eval_group: int = 32,
) -> TrainResult:
    """SGD fine-tuning; returns held-out retrieval accuracy.

    Training samples from the first `train_rows` pairs; evaluation uses
    the last `eval_rows` pairs of the same set.
    """
    model = model.copy()
    if train_rows is None:
        train_rows = dataset.n_pairs - eval_rows
    if mask is not None:
        for name, m in mask.items():
            model.weights[name] *= m
    rng = np.random.default_rng(seed)
    loss = float("nan")
    for _ in range(steps):
        idx = rng.integers(0, train_rows, size=batch_size)
        xv, xt = dataset.rows(idx)
        loss, grads = pair_loss_and_grads(model, xv, xt)
        if not np.isfinite(loss):
            raise TrainingDiverged(f"non-finite loss after sampling step (loss={loss})")
        for name, g in grads.items():
            W = model.weights[name]
            W -= (lr * g).astype(W.dtype)
            if mask is not None and name in mask:
                W *= mask[name]
    ev_v, ev_t = dataset.slice(dataset.n_pairs - eval_rows, dataset.n_pairs)
    accuracy = retrieval_accuracy(model, ev_v, ev_t, group=eval_group)
    return TrainResult(model, steps, lr, accuracy, loss, mask, {"seed": seed})
