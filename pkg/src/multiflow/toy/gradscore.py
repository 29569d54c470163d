"""Gradient-based pruning baselines for the toy benchmark.

These need backward passes, which only the toy engine provides; the
gradient-free criteria live in the scoring module.
"""

from __future__ import annotations

import numpy as np

from ..budgeting import BudgetPlan, _keep_total, _mirror_tied, _modality_totals
from ..errors import ValidationError
from ..masking import PruneMask
from ..modelspec import PrunableModel, canonical_layers
from ..scoring import ScoreMatrix
from ..tensorstore import select_topk
from .model import ToyVLM
from .train import pair_loss_and_grads


def snip_scores(model: ToyVLM, batches) -> dict[str, ScoreMatrix]:
    """Connection sensitivity |w * dL/dw|, summed over batches."""
    acc = {name: np.zeros_like(W, dtype=np.float64) for name, W in model.weights.items()}
    n_batches = 0
    for xv, xt in batches:
        _, grads = pair_loss_and_grads(model, xv, xt)
        for name, g in grads.items():
            acc[name] += np.abs(model.weights[name].astype(np.float64) * g)
        n_batches += 1
    if n_batches == 0:
        raise ValidationError("snip scoring needs at least one batch")
    return {name: ScoreMatrix(name, "snip", v) for name, v in acc.items()}


def _landing_counts(prunable: PrunableModel, pool_values, keep: int):
    canon = canonical_layers(prunable)
    pool = np.concatenate([pool_values[s.name].reshape(-1) for s in canon])
    sel = select_topk(pool, keep)
    bounds = np.cumsum([0] + [s.size for s in canon])
    landed = np.histogram(sel.kept_indices, bins=bounds)[0]
    kept_flags = np.zeros(pool.size, dtype=np.uint8)
    kept_flags[sel.kept_indices] = 1
    masks = {
        s.name: kept_flags[bounds[i] : bounds[i + 1]].reshape((s.out_dim, s.in_dim))
        for i, s in enumerate(canon)
    }
    per_layer = {s.name: int(c) for s, c in zip(canon, landed)}
    return masks, per_layer


def snip_mask(prunable: PrunableModel, model: ToyVLM, batches, sparsity: float):
    """One-shot SNIP: global top-k over sensitivity scores."""
    rho = 1.0 - sparsity
    scores = snip_scores(model, batches)
    keep = _keep_total(prunable.global_param_count, rho)
    masks, per_layer = _landing_counts(
        prunable, {n: s.values for n, s in scores.items()}, keep
    )
    plan = BudgetPlan(
        "global_score", rho, _mirror_tied(prunable, per_layer), _modality_totals(prunable, per_layer)
    )
    return PruneMask(masks, "snip", "global_score", rho), plan


def itersnip_schedule(rho_final: float, rounds: int) -> list[float]:
    """Exponential keep-ratio schedule: rho_t = rho_final^(t/T)."""
    return [rho_final ** (t / rounds) for t in range(1, rounds + 1)]


def itersnip_mask(
    prunable: PrunableModel,
    model: ToyVLM,
    batches,
    sparsity: float,
    rounds: int = 8,
    trace: list | None = None,
):
    """Iterative SNIP with an exponential keep schedule.

    Round t of T re-scores the surviving weights on its own batch shard
    and prunes to keep ratio rho_final^(t/T); pruned weights stay pruned.
    `trace`, when given, collects each round's mask dict.
    """
    batches = list(batches)
    if rounds < 1:
        raise ValidationError("itersnip needs at least one round")
    if rounds > len(batches):
        raise ValidationError(f"{rounds} rounds exceed {len(batches)} batches")
    rho_final = 1.0 - sparsity
    n_total = prunable.global_param_count
    shard_size = len(batches) // rounds
    current = {name: np.ones_like(W, dtype=np.uint8) for name, W in model.weights.items()}
    per_layer: dict[str, int] = {}
    for t, rho_t in enumerate(itersnip_schedule(rho_final, rounds), start=1):
        shard = batches[(t - 1) * shard_size : t * shard_size]
        masked = model.copy()
        for name, m in current.items():
            masked.weights[name] *= m
        scores = snip_scores(masked, shard)
        # already-pruned entries drop out of the pool for good
        pool_values = {
            name: np.where(current[name] == 1, s.values, -1.0)
            for name, s in scores.items()
        }
        keep = _keep_total(n_total, rho_t)
        current, per_layer = _landing_counts(prunable, pool_values, keep)
        if trace is not None:
            trace.append({name: m.copy() for name, m in current.items()})
    plan = BudgetPlan(
        "global_score",
        rho_final,
        _mirror_tied(prunable, per_layer),
        _modality_totals(prunable, per_layer),
    )
    return PruneMask(current, "itersnip", "global_score", rho_final), plan
