"""Per-parameter saliency criteria.

The flow criterion treats a linear layer as a complete bipartite graph:
an input node's saliency is the average signal it emits (its pooled
activation norm times the mean absolute outgoing weight), an output
node's saliency is the average signal it receives, and an edge scores
the product of both node saliencies with its own weight magnitude.
Magnitude, LAMP, layer-l2 and random baselines share the same interface
so one descending top-k masker serves every method.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

CRITERIA = (
    "multiflow",
    "magnitude",
    "lamp",
    "l2norm",
    "multiflow_edge_only",
    "multiflow_nodes_only",
    "random",
)

# criteria whose scores depend on calibration statistics
STATS_CRITERIA = ("multiflow", "multiflow_nodes_only")


@dataclass(frozen=True)
class NodeSaliencies:
    s_in: np.ndarray  # length in_dim
    s_out: np.ndarray  # length out_dim


@dataclass(frozen=True)
class ScoreMatrix:
    layer: str
    criterion: str
    values: np.ndarray  # out_dim x in_dim, finite, >= 0
    rng_seed: int | None = None


def _check_weight(W: np.ndarray) -> np.ndarray:
    W = np.asarray(W)
    if W.ndim != 2:
        raise ValidationError(f"weight must be 2-D, got shape {W.shape}")
    if not np.isfinite(W).all():
        raise ValidationError("weight contains non-finite values")
    return W


def _check_norms(n: np.ndarray, in_dim: int) -> np.ndarray:
    n = np.asarray(n)
    if n.shape != (in_dim,):
        raise ValidationError(f"in_norm shape {n.shape} does not match in_dim {in_dim}")
    if not np.isfinite(n).all() or (n < 0).any():
        raise ValidationError("in_norm must be finite and >= 0")
    return n


def node_saliencies(W: np.ndarray, n: np.ndarray) -> NodeSaliencies:
    """Input/output node saliencies of one layer.

    s_in[l] = n[l] * mean_r |W[r,l]|    (signal emitted by input node l)
    s_out[r] = mean_l n[l] * |W[r,l]|   (signal received by output node r)
    """
    W = _check_weight(W)
    n = _check_norms(n, W.shape[1])
    absW = np.abs(W)
    s_in = n * absW.mean(axis=0)
    s_out = (absW * n).sum(axis=1) / W.shape[1]
    return NodeSaliencies(s_in, s_out)


def score_multiflow(layer: str, W: np.ndarray, n: np.ndarray) -> ScoreMatrix:
    """Flow score: s_in[l] * |W[r,l]| * s_out[r]."""
    sal = node_saliencies(W, n)
    values = sal.s_in[None, :] * np.abs(W) * sal.s_out[:, None]
    return ScoreMatrix(layer, "multiflow", values)


def score_multiflow_bruteforce(layer: str, W: np.ndarray, n: np.ndarray) -> ScoreMatrix:
    """Literal per-edge evaluation of the flow score (correctness oracle).

    Scalar loops only; guarded to test-scale layers.
    """
    W = _check_weight(W)
    n_vec = _check_norms(n, W.shape[1])
    out_dim, in_dim = W.shape
    if out_dim * in_dim > 10**6:
        raise ValidationError("bruteforce scorer is limited to 1e6 parameters")
    rows = W.tolist()
    norms = n_vec.tolist()
    s_in = [0.0] * in_dim
    for l in range(in_dim):
        acc = 0.0
        for r in range(out_dim):
            acc += norms[l] * abs(rows[r][l])
        s_in[l] = acc / out_dim
    s_out = [0.0] * out_dim
    for r in range(out_dim):
        acc = 0.0
        for l in range(in_dim):
            acc += norms[l] * abs(rows[r][l])
        s_out[r] = acc / in_dim
    values = np.empty((out_dim, in_dim), dtype=np.float64)
    for r in range(out_dim):
        row = rows[r]
        for l in range(in_dim):
            values[r, l] = s_in[l] * abs(row[l]) * s_out[r]
    return ScoreMatrix(layer, "multiflow", values)


def score_magnitude(layer: str, W: np.ndarray) -> ScoreMatrix:
    W = _check_weight(W)
    return ScoreMatrix(layer, "magnitude", np.abs(W))


def score_lamp(layer: str, W: np.ndarray) -> ScoreMatrix:
    """Layer-adaptive magnitude score.

    Rank |W| ascending (ties by flat index); each weight scores its square
    over the suffix sum of squares from its own rank up. The layer maximum
    always scores exactly 1.
    """
    W = _check_weight(W)
    flat = np.abs(W).reshape(-1)
    if not flat.any():
        raise ValidationError(f"layer {layer!r} is all-zero: LAMP score undefined")
    # ascending by magnitude, equal magnitudes by descending index, so the
    # top slot (score 1) lands on the lowest-index maximal entry, matching
    # the descending tie order used everywhere else
    order = np.lexsort((-np.arange(flat.size), flat))
    sq = np.square(flat[order].astype(np.float64))
    suffix = np.cumsum(sq[::-1])[::-1]
    ranked_scores = sq / suffix
    scores = np.empty_like(ranked_scores)
    scores[order] = ranked_scores
    return ScoreMatrix(layer, "lamp", scores.astype(np.float32).reshape(W.shape))


def score_l2norm(layer: str, W: np.ndarray) -> ScoreMatrix:
    """Weight magnitude normalized by the layer's Frobenius norm."""
    W = _check_weight(W)
    fro = float(np.sqrt(np.sum(np.square(W, dtype=np.float64))))
    if fro == 0.0:
        raise ValidationError(f"layer {layer!r} is all-zero: l2norm score undefined")
    return ScoreMatrix(layer, "l2norm", (np.abs(W) / fro).astype(np.float32))


def score_ablation(layer: str, W: np.ndarray, n: np.ndarray | None, mode: str) -> ScoreMatrix:
    """Single-component variants of the flow score.

    edge_only drops both node saliencies (score is |W|, no stats needed);
    nodes_only drops the |W| factor and keeps s_in[l] * s_out[r].
    """
    if mode == "edge_only":
        W = _check_weight(W)
        return ScoreMatrix(layer, "multiflow_edge_only", np.abs(W))
    if mode == "nodes_only":
        if n is None:
            raise ValidationError("nodes_only ablation requires activation norms")
        sal = node_saliencies(W, n)
        return ScoreMatrix(layer, "multiflow_nodes_only", np.outer(sal.s_out, sal.s_in))
    raise ValidationError(f"unknown ablation mode {mode!r}")


def score_random(layer: str, shape: tuple[int, int], seed: int) -> ScoreMatrix:
    """Seeded i.i.d. uniform(0,1) scores (random-pruning baseline)."""
    rng = np.random.default_rng(seed)
    values = rng.random(size=shape, dtype=np.float32)
    return ScoreMatrix(layer, "random", values, rng_seed=seed)


def layer_seed(base_seed: int, layer: str) -> int:
    """Stable per-layer sub-seed (independent of Python hash randomization)."""
    digest = hashlib.sha256(f"{base_seed}:{layer}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def score_layer(
    criterion: str,
    layer: str,
    W: np.ndarray,
    n: np.ndarray | None = None,
    seed: int | None = None,
) -> ScoreMatrix:
    """Dispatch one layer through a named criterion."""
    if criterion == "multiflow":
        if n is None:
            raise ValidationError("multiflow criterion requires activation norms")
        return score_multiflow(layer, W, n)
    if criterion == "magnitude":
        return score_magnitude(layer, W)
    if criterion == "lamp":
        return score_lamp(layer, W)
    if criterion == "l2norm":
        return score_l2norm(layer, W)
    if criterion == "multiflow_edge_only":
        return score_ablation(layer, W, n, "edge_only")
    if criterion == "multiflow_nodes_only":
        return score_ablation(layer, W, n, "nodes_only")
    if criterion == "random":
        if seed is None:
            raise ValidationError("random criterion requires a seed")
        return score_random(layer, np.asarray(W).shape, layer_seed(seed, layer))
    raise ValidationError(f"unknown criterion {criterion!r}")
