"""Layer-wise keep-count allocation.

The multimodal policy ranks each modality's parameters by magnitude in
one flat pool and lets every layer keep whatever lands in the pool's
top-k; the modality totals are apportioned so each modality keeps the
same global ratio. Global policies use a single pool (magnitude or
score) over all layers, which is the collapse-prone ablation behaviour.

Pools count weight-tied tensors once (the canonical group member);
tied copies mirror the canonical layer's keep count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import ValidationError
from .modelspec import LayerSpec, PrunableModel, canonical_layers, partition_by_modality, resolve_tying
from .scoring import ScoreMatrix
from .tensorstore import select_topk

POLICIES = ("multimodal_magnitude", "global_magnitude", "global_score", "uniform")


@dataclass(frozen=True)
class BudgetPlan:
    policy: str
    keep_ratio: float
    per_layer: dict[str, int]
    per_modality: dict[str, int]

    def total_keep(self) -> int:
        return sum(self.per_modality.values())

    def to_dict(self) -> dict:
        return {
            "policy": self.policy,
            "keep_ratio": self.keep_ratio,
            "per_modality": dict(self.per_modality),
            "per_layer": dict(self.per_layer),
        }


def _check_ratio(rho: float) -> float:
    if not 0.0 <= rho <= 1.0:
        raise ValidationError(f"keep ratio must be in [0,1], got {rho}")
    return float(rho)


def largest_remainder(sizes: list[int], total: int) -> list[int]:
    """Hamilton apportionment of `total` proportional to `sizes`.

    Floors the proportional quotas, then hands the leftover units to the
    largest fractional remainders (ties resolved by position).
    """
    n = sum(sizes)
    if total < 0 or total > n:
        raise ValidationError(f"cannot apportion {total} over {n} items")
    if n == 0:
        return [0 for _ in sizes]
    quotas = [total * size / n for size in sizes]
    counts = [math.floor(q) for q in quotas]
    leftover = total - sum(counts)
    order = sorted(range(len(sizes)), key=lambda i: (counts[i] - quotas[i], i))
    for i in order[:leftover]:
        counts[i] += 1
    return counts


def _keep_total(param_count: int, rho: float) -> int:
    return round(rho * param_count)


def _mirror_tied(model: PrunableModel, per_layer: dict[str, int]) -> dict[str, int]:
    for group in resolve_tying(model):
        for member in group[1:]:
            per_layer[member] = per_layer[group[0]]
    return {spec.name: per_layer[spec.name] for spec in model.layers}


def modality_keep_counts(model: PrunableModel, rho: float) -> dict[str, int]:
    """Per-modality keep totals: every modality retains (as nearly as
    integers allow) the same fraction rho of its parameters."""
    rho = _check_ratio(rho)
    canon = canonical_layers(model)
    groups = _group_by_modality(canon, model.modalities)
    sizes = [sum(spec.size for spec in members) for members in groups.values()]
    total = _keep_total(sum(sizes), rho)
    counts = largest_remainder(sizes, total)
    return dict(zip(groups.keys(), counts))


def _group_by_modality(
    layers: list[LayerSpec], modalities: tuple[str, ...]
) -> dict[str, list[LayerSpec]]:
    groups: dict[str, list[LayerSpec]] = {}
    for modality in modalities:
        members = sorted(
            (s for s in layers if s.modality == modality), key=lambda s: s.depth_index
        )
        if members:
            groups[modality] = members
    return groups


def _pool_landing_counts(
    layers: list[LayerSpec], flat_values: list[np.ndarray], keep: int
) -> dict[str, int]:
    """Top-k over the concatenated pool; returns per-layer landing counts.

    Pool order is the given layer order, so ties break by (value desc,
    layer order, flat index) exactly like per-layer selection.
    """
    pool = np.concatenate(flat_values) if flat_values else np.empty(0, dtype=np.float32)
    sel = select_topk(pool, keep)
    bounds = np.cumsum([0] + [spec.size for spec in layers])
    landed = np.histogram(sel.kept_indices, bins=bounds)[0] if keep else np.zeros(len(layers), dtype=int)
    return {spec.name: int(c) for spec, c in zip(layers, landed)}


def _weights_for(weights: Mapping[str, np.ndarray], spec: LayerSpec) -> np.ndarray:
    try:
        W = weights[spec.name]
    except KeyError as exc:
        raise ValidationError(f"missing weights for layer {spec.name!r}") from exc
    W = np.asarray(W)
    if W.shape != (spec.out_dim, spec.in_dim):
        raise ValidationError(
            f"layer {spec.name!r}: weight shape {W.shape} does not match spec "
            f"({spec.out_dim}, {spec.in_dim})"
        )
    return W


def budgets_multimodal(
    model: PrunableModel, weights: Mapping[str, np.ndarray], rho: float
) -> BudgetPlan:
    """Modality-aware magnitude prior: per modality, keep the top-k^m
    parameters by |w| and count where they land."""
    rho = _check_ratio(rho)
    keep_by_modality = modality_keep_counts(model, rho)
    groups = _group_by_modality(canonical_layers(model), model.modalities)
    per_layer: dict[str, int] = {}
    for modality, members in groups.items():
        flats = [np.abs(_weights_for(weights, spec)).reshape(-1) for spec in members]
        per_layer.update(_pool_landing_counts(members, flats, keep_by_modality[modality]))
    return BudgetPlan(
        "multimodal_magnitude", rho, _mirror_tied(model, per_layer), keep_by_modality
    )


def budgets_global_magnitude(
    model: PrunableModel, weights: Mapping[str, np.ndarray], rho: float
) -> BudgetPlan:
    """One-shot global magnitude budgets (single pool, no modality split)."""
    rho = _check_ratio(rho)
    canon = canonical_layers(model)
    keep = _keep_total(sum(spec.size for spec in canon), rho)
    flats = [np.abs(_weights_for(weights, spec)).reshape(-1) for spec in canon]
    per_layer = _pool_landing_counts(canon, flats, keep)
    return BudgetPlan(
        "global_magnitude",
        rho,
        _mirror_tied(model, per_layer),
        _modality_totals(model, per_layer),
    )


def budgets_global_score(
    model: PrunableModel, scores: Mapping[str, ScoreMatrix], rho: float
) -> BudgetPlan:
    """Global top-k over score values (the no-prior ablation; may collapse
    whole layers)."""
    rho = _check_ratio(rho)
    canon = canonical_layers(model)
    criteria = {scores[spec.name].criterion for spec in canon if spec.name in scores}
    if len(criteria) > 1:
        raise ValidationError(f"mixed criteria in score pool: {sorted(criteria)}")
    flats = []
    for spec in canon:
        if spec.name not in scores:
            raise ValidationError(f"missing scores for layer {spec.name!r}")
        values = np.asarray(scores[spec.name].values)
        if values.shape != (spec.out_dim, spec.in_dim):
            raise ValidationError(f"layer {spec.name!r}: score shape mismatch")
        flats.append(values.reshape(-1))
    keep = _keep_total(sum(spec.size for spec in canon), rho)
    per_layer = _pool_landing_counts(canon, flats, keep)
    return BudgetPlan(
        "global_score",
        rho,
        _mirror_tied(model, per_layer),
        _modality_totals(model, per_layer),
    )


def budgets_uniform(model: PrunableModel, rho: float) -> BudgetPlan:
    """Keep counts proportional to layer size (reference policy)."""
    rho = _check_ratio(rho)
    canon = canonical_layers(model)
    keep = _keep_total(sum(spec.size for spec in canon), rho)
    counts = largest_remainder([spec.size for spec in canon], keep)
    per_layer = {spec.name: c for spec, c in zip(canon, counts)}
    return BudgetPlan(
        "uniform", rho, _mirror_tied(model, per_layer), _modality_totals(model, per_layer)
    )


def _modality_totals(model: PrunableModel, per_layer: dict[str, int]) -> dict[str, int]:
    canon = {spec.name for spec in canonical_layers(model)}
    totals: dict[str, int] = {}
    for spec in model.layers:
        if spec.name in canon:
            totals[spec.modality] = totals.get(spec.modality, 0) + per_layer[spec.name]
    return totals


def make_budgets(
    policy: str,
    model: PrunableModel,
    rho: float,
    weights: Mapping[str, np.ndarray] | None = None,
    scores: Mapping[str, ScoreMatrix] | None = None,
) -> BudgetPlan:
    if policy == "multimodal_magnitude":
        if weights is None:
            raise ValidationError("multimodal_magnitude budgets need checkpoint weights")
        return budgets_multimodal(model, weights, rho)
    if policy == "global_magnitude":
        if weights is None:
            raise ValidationError("global_magnitude budgets need checkpoint weights")
        return budgets_global_magnitude(model, weights, rho)
    if policy == "global_score":
        if scores is None:
            raise ValidationError("global_score budgets need score matrices")
        return budgets_global_score(model, scores, rho)
    if policy == "uniform":
        return budgets_uniform(model, rho)
    raise ValidationError(f"unknown budget policy {policy!r}")


def check_conservation(plan: BudgetPlan, model: PrunableModel) -> None:
    """Assert exact conservation over the canonical (deduplicated) layer set."""
    canon = canonical_layers(model)
    expected = _keep_total(sum(spec.size for spec in canon), plan.keep_ratio)
    got = sum(plan.per_layer[spec.name] for spec in canon)
    if got != expected:
        raise ValidationError(f"budget conservation violated: {got} != {expected}")
    by_modality = sum(plan.per_modality.values())
    if by_modality != expected:
        raise ValidationError(
            f"modality totals {by_modality} disagree with global keep {expected}"
        )
