"""Streaming accumulation of per-input-neuron activation L2 norms.

For every prunable layer we keep the sum of squared activations over all
calibration tokens; the finalized statistic is the square root of that
sum (one pooled L2 norm per input neuron). Token counts are recorded for
provenance but never normalize the norm: within-layer score rankings are
invariant to a uniform per-layer scale.

Each batch contributes one float64 partial-sum vector; the partials are
reduced in batch order only at finalization, so merging shard
accumulators (in shard order) is bit-exact against single-stream
accumulation. Memory grows with the batch count, which is fine at
calibration volumes (thousands of batches).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import reduce

import numpy as np

from .errors import FormatError, ValidationError
from .modelspec import PrunableModel
from .tensorstore import TensorMap, read_container, write_container

_NORM_SUFFIX = ".in_norm"


class CalibrationError(ValidationError):
    pass


class NormAccumulator:
    """Single-writer accumulator of activation sums of squares."""

    def __init__(self, model: PrunableModel):
        self._in_dims = {spec.name: spec.in_dim for spec in model.layers}
        self._terms: dict[str, list[np.ndarray]] = {spec.name: [] for spec in model.layers}
        self._tokens: dict[str, int] = {spec.name: 0 for spec in model.layers}

    @property
    def sumsq(self) -> dict[str, np.ndarray]:
        """Running sums of squares (batch-order left fold, deterministic)."""
        return {
            layer: reduce(np.add, terms, np.zeros(self._in_dims[layer], dtype=np.float64))
            for layer, terms in self._terms.items()
        }

    @property
    def token_count(self) -> int:
        """Common per-layer token count; layers fed from one batch stream agree."""
        counts = set(self._tokens.values())
        if not counts:
            return 0
        if len(counts) != 1:
            raise CalibrationError(f"layer token counts diverge: {sorted(counts)}")
        return counts.pop()

    def accumulate(self, layer: str, batch: np.ndarray) -> None:
        if layer not in self._terms:
            raise CalibrationError(f"unknown layer {layer!r}")
        batch = np.asarray(batch)
        if batch.ndim != 2 or batch.shape[1] != self._in_dims[layer]:
            raise CalibrationError(
                f"layer {layer!r}: batch width {batch.shape} does not match "
                f"in_dim {self._in_dims[layer]}"
            )
        if not np.isfinite(batch).all():
            raise CalibrationError(f"layer {layer!r}: non-finite activation")
        self._terms[layer].append(np.sum(np.square(batch, dtype=np.float64), axis=0))
        self._tokens[layer] += batch.shape[0]

    def merge(self, other: "NormAccumulator") -> None:
        """Fold a later shard in; exact against single-stream accumulation."""
        if set(self._terms) != set(other._terms):
            raise CalibrationError("cannot merge accumulators over different layers")
        for layer in self._terms:
            self._terms[layer].extend(other._terms[layer])
            self._tokens[layer] += other._tokens[layer]


@dataclass(frozen=True)
class ActivationStats:
    in_norm: dict[str, np.ndarray]  # layer -> F32 vector of length in_dim
    token_count: int
    source_digest: str


def finalize(acc: NormAccumulator, source_digest: str = "") -> ActivationStats:
    tokens = acc.token_count
    if tokens <= 0:
        raise CalibrationError("no calibration data: token_count is 0")
    norms = {
        layer: np.sqrt(sumsq).astype(np.float32) for layer, sumsq in acc.sumsq.items()
    }
    return ActivationStats(norms, tokens, source_digest)


def write_stats(stats: ActivationStats, path) -> None:
    tm = TensorMap(
        metadata={
            "token_count": str(stats.token_count),
            "source_digest": stats.source_digest,
        }
    )
    for layer, norm in stats.in_norm.items():
        tm.put(layer + _NORM_SUFFIX, np.asarray(norm, dtype=np.float32))
    write_container(tm, path)


def read_stats(path) -> ActivationStats:
    tm = read_container(path)
    try:
        token_count = int(tm.metadata.get("token_count", ""))
    except ValueError as exc:
        raise FormatError(f"{path}: missing or invalid token_count metadata") from exc
    if token_count <= 0:
        raise FormatError(f"{path}: token_count must be positive, got {token_count}")
    norms: dict[str, np.ndarray] = {}
    for name, arr in tm.items():
        if not name.endswith(_NORM_SUFFIX):
            raise FormatError(f"{path}: unexpected tensor {name!r} in stats file")
        if arr.dtype != np.float32 or arr.ndim != 1:
            raise FormatError(f"{path}: {name!r} must be a 1-D F32 tensor")
        norms[name[: -len(_NORM_SUFFIX)]] = arr
    return ActivationStats(norms, token_count, tm.metadata.get("source_digest", ""))


def validate_stats(stats: ActivationStats, model: PrunableModel) -> None:
    """Check stats cover every model layer with the right vector length."""
    for spec in model.layers:
        norm = stats.in_norm.get(spec.name)
        if norm is None:
            raise CalibrationError(f"stats missing layer {spec.name!r}")
        if norm.shape != (spec.in_dim,):
            raise CalibrationError(
                f"stats for {spec.name!r} have length {norm.shape}, "
                f"expected ({spec.in_dim},)"
            )
        if not np.isfinite(norm).all() or (norm < 0).any():
            raise CalibrationError(f"stats for {spec.name!r} must be finite and >= 0")
