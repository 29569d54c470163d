"""Binary keep/drop masks: construction from scores and budgets,
tying propagation, checkpoint application and sparsity reporting."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .budgeting import BudgetPlan
from .errors import FormatError, ValidationError
from .modelspec import PrunableModel
from .scoring import ScoreMatrix
from .tensorstore import TensorMap, read_container, select_topk, write_container

_MASK_SUFFIX = ".mask"


@dataclass
class PruneMask:
    masks: dict[str, np.ndarray]  # layer -> U8 matrix with entries in {0,1}
    criterion: str
    policy: str
    keep_ratio: float
    inverted: bool = False


def build_layer_mask(values: np.ndarray, k: int, invert: bool = False) -> np.ndarray:
    """Keep the top-k (or, inverted, bottom-k) entries of one score matrix.

    Inverted selection keeps the lowest scores; ties still break by
    ascending flat index.
    """
    values = np.asarray(values)
    if not 0 <= k <= values.size:
        raise ValidationError(f"keep count {k} exceeds layer size {values.size}")
    flat = values.reshape(-1)
    sel = select_topk(-flat if invert else flat, k)
    mask = np.zeros(values.size, dtype=np.uint8)
    mask[sel.kept_indices] = 1
    return mask.reshape(values.shape)


def build_mask(
    scores: Mapping[str, ScoreMatrix], budgets: BudgetPlan, invert: bool = False
) -> PruneMask:
    """Per-layer top-k_l selection over saliency scores."""
    if set(scores) != set(budgets.per_layer):
        missing = set(budgets.per_layer) ^ set(scores)
        raise ValidationError(f"scores and budgets cover different layers: {sorted(missing)}")
    criteria = {sm.criterion for sm in scores.values()}
    if len(criteria) > 1:
        raise ValidationError(f"mixed criteria in mask build: {sorted(criteria)}")
    masks = {
        layer: build_layer_mask(scores[layer].values, budgets.per_layer[layer], invert)
        for layer in budgets.per_layer
    }
    criterion = criteria.pop() if criteria else "none"
    return PruneMask(masks, criterion, budgets.policy, budgets.keep_ratio, invert)


def propagate_tying(mask: PruneMask, groups: list[list[str]]) -> PruneMask:
    """Copy each group's canonical (first) member mask onto the others."""
    for group in groups:
        canonical = group[0]
        if canonical not in mask.masks:
            raise ValidationError(f"mask missing canonical layer {canonical!r}")
        for member in group[1:]:
            if member in mask.masks and mask.masks[member].shape != mask.masks[canonical].shape:
                raise ValidationError(
                    f"tie group member {member!r} shape differs from {canonical!r}"
                )
            mask.masks[member] = mask.masks[canonical].copy()
    return mask


def apply_mask(checkpoint: TensorMap, mask: PruneMask) -> TensorMap:
    """Elementwise product of masked tensors; everything else passes through."""
    out = TensorMap(metadata=dict(checkpoint.metadata))
    for name, arr in checkpoint.items():
        m = mask.masks.get(name)
        if m is None:
            out.put(name, arr)
            continue
        if m.shape != arr.shape:
            raise ValidationError(
                f"mask shape {m.shape} does not match tensor {name!r} shape {arr.shape}"
            )
        out.put(name, (arr * m).astype(arr.dtype))
    return out


@dataclass(frozen=True)
class LayerSparsity:
    layer: str
    modality: str
    depth_index: int
    size: int
    kept: int

    @property
    def sparsity(self) -> float:
        return 1.0 - self.kept / self.size


@dataclass(frozen=True)
class SparsityReport:
    rows: tuple[LayerSparsity, ...]  # ordered by (modality declaration, depth)
    per_modality: dict[str, float]
    global_sparsity: float
    collapsed_layers: tuple[str, ...]


def sparsity_report(mask: PruneMask, model: PrunableModel) -> SparsityReport:
    """Layer-by-layer sparsity breakdown in (modality, depth) order."""
    modality_order = {m: i for i, m in enumerate(model.modalities)}
    rows = []
    for spec in sorted(
        model.layers, key=lambda s: (modality_order[s.modality], s.depth_index)
    ):
        m = mask.masks.get(spec.name)
        if m is None:
            raise ValidationError(f"mask missing layer {spec.name!r}")
        rows.append(
            LayerSparsity(spec.name, spec.modality, spec.depth_index, spec.size, int(m.sum()))
        )
    kept_by_mod: dict[str, int] = {}
    size_by_mod: dict[str, int] = {}
    for row in rows:
        kept_by_mod[row.modality] = kept_by_mod.get(row.modality, 0) + row.kept
        size_by_mod[row.modality] = size_by_mod.get(row.modality, 0) + row.size
    per_modality = {m: 1.0 - kept_by_mod[m] / size_by_mod[m] for m in kept_by_mod}
    total_size = sum(size_by_mod.values())
    total_kept = sum(kept_by_mod.values())
    collapsed = tuple(row.layer for row in rows if row.kept == 0)
    return SparsityReport(
        tuple(rows), per_modality, 1.0 - total_kept / total_size if total_size else 0.0, collapsed
    )


def verify_mask(
    mask: PruneMask, budgets: BudgetPlan, groups: list[list[str]]
) -> list[str]:
    """Check all mask invariants; returns violations as data (empty = pass)."""
    violations = []
    for layer, k in budgets.per_layer.items():
        m = mask.masks.get(layer)
        if m is None:
            violations.append(f"missing mask for layer {layer!r}")
            continue
        if m.dtype != np.uint8 or not np.isin(m, (0, 1)).all():
            violations.append(f"layer {layer!r}: mask entries are not 0/1 U8")
            continue
        kept = int(m.sum())
        if kept != k:
            violations.append(f"layer {layer!r}: budget mismatch, kept {kept} != k {k}")
    for layer in mask.masks:
        if layer not in budgets.per_layer:
            violations.append(f"mask covers layer {layer!r} absent from budgets")
    for group in groups:
        canonical = mask.masks.get(group[0])
        for member in group[1:]:
            other = mask.masks.get(member)
            if canonical is None or other is None:
                continue
            if canonical.shape != other.shape or not np.array_equal(canonical, other):
                violations.append(
                    f"tie violation: {member!r} mask differs from canonical {group[0]!r}"
                )
    return violations


def write_mask(mask: PruneMask, path) -> None:
    tm = TensorMap(
        metadata={
            "criterion": mask.criterion,
            "policy": mask.policy,
            "keep_ratio": repr(float(mask.keep_ratio)),
            "inverted": "true" if mask.inverted else "false",
        }
    )
    for layer, m in mask.masks.items():
        tm.put(layer + _MASK_SUFFIX, np.asarray(m, dtype=np.uint8))
    write_container(tm, path)


def read_mask(path) -> PruneMask:
    tm = read_container(path)
    masks: dict[str, np.ndarray] = {}
    for name, arr in tm.items():
        if not name.endswith(_MASK_SUFFIX):
            raise FormatError(f"{path}: unexpected tensor {name!r} in mask file")
        if arr.dtype != np.uint8:
            raise FormatError(f"{path}: {name!r} must be U8")
        masks[name[: -len(_MASK_SUFFIX)]] = arr
    meta = tm.metadata
    try:
        keep_ratio = float(meta["keep_ratio"])
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{path}: missing or invalid keep_ratio metadata") from exc
    return PruneMask(
        masks,
        meta.get("criterion", "unknown"),
        meta.get("policy", "unknown"),
        keep_ratio,
        meta.get("inverted") == "true",
    )
