/** Export manifest: where the source model lives, how its tensor names map
 * onto toolkit names, which modality each layer gets, and how to replay the
 * forward pass for calibration statistics. */

import * as fs from "node:fs";
import * as path from "node:path";

import { ExportValidationError } from "./container";

export interface RenameRule {
  pattern: string;
  replace: string;
}

export interface ModalityRule {
  pattern: string;
  modality: string;
}

export interface LinearNode {
  op: "linear";
  id: string;
  input: string;
  weight: string; // source tensor name
  relu: boolean;
}

export interface ConcatNode {
  op: "concat";
  id: string;
  inputs: string[];
}

export type GraphNode = LinearNode | ConcatNode;

export interface ForwardSpec {
  inputs: Record<string, string>; // stream id -> tensor name in the dataset file
  nodes: GraphNode[];
}

export interface CalibrationSpec {
  dataset: string;
  batches: number;
  batch_size: number;
  seed: number;
}

export interface ExportManifest {
  source: string;
  rename: RenameRule[];
  exclude: string[];
  modalities: string[];
  modality_rules: ModalityRule[];
  calibration: CalibrationSpec;
  forward: ForwardSpec;
  outputs: { checkpoint: string; model_spec: string; stats: string };
  baseDir: string;
}

function need<T>(obj: Record<string, unknown>, key: string, kind: string): T {
  if (!(key in obj)) {
    throw new ExportValidationError(`manifest is missing ${JSON.stringify(key)} (${kind})`);
  }
  return obj[key] as T;
}

export function loadManifest(manifestPath: string): ExportManifest {
  const raw = JSON.parse(fs.readFileSync(manifestPath, "utf-8")) as Record<string, unknown>;
  const baseDir = path.dirname(path.resolve(manifestPath));
  const manifest: ExportManifest = {
    source: need<string>(raw, "source", "source model path"),
    rename: (raw.rename as RenameRule[]) ?? [],
    exclude: (raw.exclude as string[]) ?? [],
    modalities: need<string[]>(raw, "modalities", "modality list"),
    modality_rules: need<ModalityRule[]>(raw, "modality_rules", "name-pattern rules"),
    calibration: need<CalibrationSpec>(raw, "calibration", "calibration loader spec"),
    forward: need<ForwardSpec>(raw, "forward", "forward graph"),
    outputs: need<{ checkpoint: string; model_spec: string; stats: string }>(
      raw,
      "outputs",
      "output paths"
    ),
    baseDir,
  };
  if (!Array.isArray(manifest.modalities) || manifest.modalities.length === 0) {
    throw new ExportValidationError("manifest 'modalities' must be a non-empty list");
  }
  for (const rule of manifest.modality_rules) {
    if (!manifest.modalities.includes(rule.modality)) {
      throw new ExportValidationError(
        `modality rule targets undeclared modality ${JSON.stringify(rule.modality)}`
      );
    }
  }
  return manifest;
}

export function resolvePath(manifest: ExportManifest, p: string): string {
  return path.isAbsolute(p) ? p : path.join(manifest.baseDir, p);
}

/** First matching rename rule maps a source name to its toolkit name. */
export function toolkitName(rules: RenameRule[], sourceName: string): string {
  for (const rule of rules) {
    const re = new RegExp(rule.pattern);
    if (re.test(sourceName)) {
      return sourceName.replace(re, rule.replace);
    }
  }
  return sourceName;
}

/** First matching modality rule (on the toolkit name); null when unmapped. */
export function modalityOf(rules: ModalityRule[], name: string): string | null {
  for (const rule of rules) {
    if (new RegExp(rule.pattern).test(name)) {
      return rule.modality;
    }
  }
  return null;
}

export function isExcluded(patterns: string[], sourceName: string): boolean {
  return patterns.some((p) => new RegExp(p).test(sourceName));
}
