"""Score -> budget -> mask composition shared by the CLI and the toy
experiment driver.

Layers are scored one at a time and released, so peak memory stays near
the checkpoint plus one layer; the global-score policy additionally keeps
a single flat copy of all score values for its pool (and scores each
layer twice, once for the pool and once for the mask).
"""

from __future__ import annotations

import numpy as np

from .budgeting import BudgetPlan, _keep_total, make_budgets, _modality_totals, _mirror_tied
from .calibration import ActivationStats, validate_stats
from .errors import ValidationError
from .masking import PruneMask, build_layer_mask, propagate_tying, sparsity_report
from .modelspec import LayerSpec, PrunableModel, canonical_layers, resolve_tying
from .scoring import STATS_CRITERIA, ScoreMatrix, score_layer
from .tensorstore import TensorMap, select_topk


def pooled_norms(stats: ActivationStats, model: PrunableModel) -> dict[str, np.ndarray]:
    """Activation norms per canonical layer, with tied groups pooled.

    Tied tensors see several calibration streams (one per sharing module);
    pooling sums the squared norms, which equals treating all call-sites
    as a single stream.
    """
    pooled: dict[str, np.ndarray] = {}
    for group in resolve_tying(model):
        acc = np.zeros_like(np.asarray(stats.in_norm[group[0]], dtype=np.float64))
        for member in group:
            acc += np.square(np.asarray(stats.in_norm[member], dtype=np.float64))
        pooled[group[0]] = np.sqrt(acc).astype(np.float32)
    return pooled


def compute_scores(
    model: PrunableModel,
    weights,
    criterion: str,
    stats: ActivationStats | None = None,
    seed: int | None = None,
) -> dict[str, ScoreMatrix]:
    """Score every canonical layer under one criterion (small-model path)."""
    norms = _norms_for(model, criterion, stats)
    return {
        spec.name: _score_one(spec, weights, criterion, norms, seed)
        for spec in canonical_layers(model)
    }


def _norms_for(model, criterion, stats) -> dict[str, np.ndarray] | None:
    if criterion not in STATS_CRITERIA:
        return None
    if stats is None:
        raise ValidationError(f"criterion {criterion!r} requires calibration stats")
    validate_stats(stats, model)
    return pooled_norms(stats, model)


def _score_one(spec: LayerSpec, weights, criterion, norms, seed) -> ScoreMatrix:
    W = weights[spec.name] if not isinstance(weights, TensorMap) else weights.get(spec.name)
    n = norms[spec.name] if norms is not None else None
    return score_layer(criterion, spec.name, W, n=n, seed=seed)


def _budgets_global_score_streaming(
    model: PrunableModel, score_of, rho: float
) -> BudgetPlan:
    canon = canonical_layers(model)
    flats = [np.asarray(score_of(spec).values).reshape(-1) for spec in canon]
    pool = np.concatenate(flats)
    del flats
    keep = _keep_total(pool.size, rho)
    sel = select_topk(pool, keep)
    bounds = np.cumsum([0] + [spec.size for spec in canon])
    landed = np.histogram(sel.kept_indices, bins=bounds)[0]
    per_layer = {spec.name: int(c) for spec, c in zip(canon, landed)}
    return BudgetPlan(
        "global_score", rho, _mirror_tied(model, per_layer), _modality_totals(model, per_layer)
    )


def make_mask(
    model: PrunableModel,
    weights,
    criterion: str,
    policy: str,
    sparsity: float,
    stats: ActivationStats | None = None,
    seed: int | None = None,
    invert: bool = False,
) -> tuple[PruneMask, BudgetPlan]:
    """Full pruning composition for one (criterion, policy, sparsity)."""
    if not 0.0 <= sparsity <= 1.0:
        raise ValidationError(f"sparsity must be in [0,1], got {sparsity}")
    rho = 1.0 - sparsity
    norms = _norms_for(model, criterion, stats)
    score_of = lambda spec: _score_one(spec, weights, criterion, norms, seed)

    if policy == "global_score":
        budgets = _budgets_global_score_streaming(model, score_of, rho)
    else:
        budgets = make_budgets(policy, model, rho, weights=_weight_lookup(weights))

    masks = {
        spec.name: build_layer_mask(
            score_of(spec).values, budgets.per_layer[spec.name], invert
        )
        for spec in canonical_layers(model)
    }
    mask = PruneMask(masks, criterion, policy, rho, invert)
    propagate_tying(mask, resolve_tying(model))
    return mask, budgets


def _weight_lookup(weights):
    if isinstance(weights, TensorMap):
        return {name: arr for name, arr in weights.items()}
    return weights


def describe_mask(mask: PruneMask, model: PrunableModel):
    return sparsity_report(mask, model)
