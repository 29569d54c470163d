"""Prunable-model description: which checkpoint tensors are prunable,
their modality, depth and weight-tying groups.

Only 2-D weight tensors are prunable; shapes always come from the
checkpoint, never from the config.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .errors import ValidationError
from .tensorstore import TensorMap


class ModelSpecError(ValidationError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    name: str
    out_dim: int
    in_dim: int
    modality: str
    depth_index: int
    tie_group: str | None = None

    @property
    def size(self) -> int:
        return self.out_dim * self.in_dim


@dataclass(frozen=True)
class PrunableModel:
    layers: tuple[LayerSpec, ...]
    modalities: tuple[str, ...]
    global_param_count: int

    def layer(self, name: str) -> LayerSpec:
        for spec in self.layers:
            if spec.name == name:
                return spec
        raise KeyError(name)

    def layer_names(self) -> list[str]:
        return [spec.name for spec in self.layers]


def load_model_spec(config: dict, checkpoint: TensorMap) -> PrunableModel:
    """Validate a model-spec config against a checkpoint.

    Config layout: {"modalities": [...], "layers": [{"name", "modality",
    "depth_index"?, "tie_group"?}, ...]}. depth_index defaults to the
    listing order within each modality.
    """
    if not isinstance(config, dict):
        raise ModelSpecError("model spec must be a JSON object")
    modalities = config.get("modalities")
    if not isinstance(modalities, list) or not all(isinstance(m, str) for m in modalities):
        raise ModelSpecError("'modalities' must be a list of strings")
    if len(set(modalities)) != len(modalities):
        raise ModelSpecError("duplicate modality names")
    raw_layers = config.get("layers")
    if not isinstance(raw_layers, list):
        raise ModelSpecError("'layers' must be a list")

    layers: list[LayerSpec] = []
    seen_names: set[str] = set()
    seen_depth: set[tuple[str, int]] = set()
    next_depth = {m: 0 for m in modalities}
    for entry in raw_layers:
        if not isinstance(entry, dict) or "name" not in entry or "modality" not in entry:
            raise ModelSpecError(f"layer entry {entry!r} needs 'name' and 'modality'")
        name = entry["name"]
        modality = entry["modality"]
        if modality not in modalities:
            raise ModelSpecError(f"layer {name!r}: unknown modality {modality!r}")
        if name in seen_names:
            raise ModelSpecError(f"duplicate layer {name!r}")
        seen_names.add(name)
        if name not in checkpoint:
            raise ModelSpecError(f"missing tensor {name!r} in checkpoint")
        arr = checkpoint.get(name)
        if arr.ndim != 2:
            raise ModelSpecError(
                f"layer {name!r}: prunable tensors must be 2-D, got shape {arr.shape}"
            )
        out_dim, in_dim = (int(d) for d in arr.shape)
        if out_dim < 1 or in_dim < 1:
            raise ModelSpecError(f"layer {name!r}: degenerate shape {arr.shape}")
        depth = entry.get("depth_index")
        if depth is None:
            depth = next_depth[modality]
        elif not isinstance(depth, int) or depth < 0:
            raise ModelSpecError(f"layer {name!r}: invalid depth_index {depth!r}")
        next_depth[modality] = max(next_depth[modality], depth + 1)
        if (modality, depth) in seen_depth:
            raise ModelSpecError(f"duplicate (modality, depth_index) = ({modality}, {depth})")
        seen_depth.add((modality, depth))
        tie_group = entry.get("tie_group")
        if tie_group is not None and not isinstance(tie_group, str):
            raise ModelSpecError(f"layer {name!r}: tie_group must be a string")
        layers.append(LayerSpec(name, out_dim, in_dim, modality, depth, tie_group))

    shapes_by_tie: dict[str, tuple[int, int]] = {}
    for spec in layers:
        if spec.tie_group is None:
            continue
        shape = (spec.out_dim, spec.in_dim)
        prev = shapes_by_tie.setdefault(spec.tie_group, shape)
        if prev != shape:
            raise ModelSpecError(
                f"tie shape conflict in group {spec.tie_group!r}: {prev} vs {shape}"
            )

    total = sum(spec.size for spec in layers)
    return PrunableModel(tuple(layers), tuple(modalities), total)


def load_model_spec_file(path, checkpoint: TensorMap) -> PrunableModel:
    try:
        with open(path, "r", encoding="utf-8") as f:
            config = json.load(f)
    except OSError as exc:
        raise ModelSpecError(f"cannot read model spec {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ModelSpecError(f"model spec {path} is not valid JSON: {exc}") from exc
    return load_model_spec(config, checkpoint)


def partition_by_modality(model: PrunableModel) -> dict[str, list[LayerSpec]]:
    """Group layers by modality, each group ordered by depth_index.

    Returns a dict in modality declaration order; modalities without
    layers are omitted.
    """
    groups: dict[str, list[LayerSpec]] = {}
    for modality in model.modalities:
        members = sorted(
            (spec for spec in model.layers if spec.modality == modality),
            key=lambda s: s.depth_index,
        )
        if members:
            groups[modality] = members
    return groups


def resolve_tying(model: PrunableModel) -> list[list[str]]:
    """Weight-tying groups as lists of layer names (singletons when untied).

    Members keep model order; the first member is the canonical one.
    Groups are ordered by their first member's name.
    """
    by_group: dict[str, list[str]] = {}
    singles: list[list[str]] = []
    for spec in model.layers:
        if spec.tie_group is None:
            singles.append([spec.name])
        else:
            by_group.setdefault(spec.tie_group, []).append(spec.name)
    groups = singles + list(by_group.values())
    groups.sort(key=lambda g: g[0])
    return groups


def canonical_layers(model: PrunableModel) -> list[LayerSpec]:
    """Layers with tied duplicates removed (first member represents the
    group), in model order. Budget pools count shared weights once."""
    canonical: set[str] = {group[0] for group in resolve_tying(model)}
    return [spec for spec in model.layers if spec.name in canonical]


def canonical_name(model: PrunableModel, name: str) -> str:
    """Map a layer name to its tie group's canonical member (itself if untied)."""
    spec = model.layer(name)
    if spec.tie_group is None:
        return name
    for member in model.layers:
        if member.tie_group == spec.tie_group:
            return member.name
    raise KeyError(name)
