/** Checkpoint and model-spec export: dump tensors under toolkit names and
 * assign every prunable 2-D weight exactly one modality. */

import * as fs from "node:fs";
import * as path from "node:path";

import {
  ExportValidationError,
  TensorMap,
  emptyTensorMap,
  readContainer,
  writeContainer,
} from "./container";
import {
  ExportManifest,
  isExcluded,
  modalityOf,
  resolvePath,
  toolkitName,
} from "./manifest";

export interface LayerEntry {
  name: string;
  modality: string;
  depth_index: number;
}

export interface ModelSpec {
  modalities: string[];
  layers: LayerEntry[];
}

export interface ExportResult {
  checkpoint: TensorMap;
  spec: ModelSpec;
  /** source tensor name -> toolkit name, prunable layers only */
  layerNames: Map<string, string>;
}

export function buildExport(manifest: ExportManifest): ExportResult {
  const source = readContainer(resolvePath(manifest, manifest.source));
  const checkpoint = emptyTensorMap();
  checkpoint.metadata = { ...source.metadata };

  const layerNames = new Map<string, string>();
  const unmapped: string[] = [];
  const seen = new Map<string, string>();
  for (const [sourceName, tensor] of source.tensors) {
    const name = toolkitName(manifest.rename, sourceName);
    const clash = seen.get(name);
    if (clash !== undefined) {
      throw new ExportValidationError(
        `rename rules map both ${clash} and ${sourceName} onto ${name}`
      );
    }
    seen.set(name, sourceName);
    checkpoint.tensors.set(name, tensor);
    const prunable = tensor.shape.length === 2 && !isExcluded(manifest.exclude, sourceName);
    if (!prunable) {
      continue;
    }
    if (modalityOf(manifest.modality_rules, name) === null) {
      unmapped.push(sourceName);
      continue;
    }
    layerNames.set(sourceName, name);
  }
  if (unmapped.length > 0) {
    throw new ExportValidationError(
      `prunable 2-D weights without a modality rule: ${unmapped.sort().join(", ")}`
    );
  }

  const layers: LayerEntry[] = [];
  const depthByModality = new Map<string, number>();
  const sortedToolkit = [...layerNames.values()].sort();
  for (const name of sortedToolkit) {
    const modality = modalityOf(manifest.modality_rules, name)!;
    const depth = depthByModality.get(modality) ?? 0;
    depthByModality.set(modality, depth + 1);
    layers.push({ name, modality, depth_index: depth });
  }
  return {
    checkpoint,
    spec: { modalities: manifest.modalities, layers },
    layerNames,
  };
}

export function exportCheckpoint(manifest: ExportManifest): ExportResult {
  const result = buildExport(manifest);
  const ckptPath = resolvePath(manifest, manifest.outputs.checkpoint);
  const specPath = resolvePath(manifest, manifest.outputs.model_spec);
  fs.mkdirSync(path.dirname(ckptPath), { recursive: true });
  fs.mkdirSync(path.dirname(specPath), { recursive: true });
  writeContainer(result.checkpoint, ckptPath);
  const specJson = JSON.stringify(
    { layers: result.spec.layers, modalities: result.spec.modalities },
    null,
    2
  );
  fs.writeFileSync(specPath, specJson + "\n");
  return result;
}
