/** Forward-graph replay over calibration batches, hooking every linear
 * node's input to accumulate per-neuron sums of squares.
 *
 * Stats are keyed by toolkit layer names; two graph nodes whose weights
 * map to the same toolkit name (tied call-sites) pool into one bucket.
 */

import * as crypto from "node:crypto";
import * as fs from "node:fs";
import * as path from "node:path";

import {
  ExportValidationError,
  TensorMap,
  emptyTensorMap,
  readContainer,
  writeContainer,
} from "./container";
import { ExportManifest, GraphNode, resolvePath, toolkitName } from "./manifest";
import { buildExport } from "./exporter";

interface Matrix {
  rows: number;
  cols: number;
  data: Float64Array; // row-major
}

function matrixFromTensor(shape: number[], data: Float32Array): Matrix {
  if (shape.length !== 2) {
    throw new ExportValidationError(`expected a 2-D tensor, got shape [${shape}]`);
  }
  return { rows: shape[0], cols: shape[1], data: Float64Array.from(data) };
}

/** y = x W^T with optional ReLU; W is [out, in]. */
function linearForward(x: Matrix, W: Matrix, relu: boolean): Matrix {
  if (x.cols !== W.cols) {
    throw new ExportValidationError(
      `linear input width ${x.cols} does not match weight in_dim ${W.cols}`
    );
  }
  const out: Matrix = { rows: x.rows, cols: W.rows, data: new Float64Array(x.rows * W.rows) };
  for (let r = 0; r < x.rows; r++) {
    const xBase = r * x.cols;
    for (let o = 0; o < W.rows; o++) {
      const wBase = o * W.cols;
      let acc = 0;
      for (let c = 0; c < x.cols; c++) {
        acc += x.data[xBase + c] * W.data[wBase + c];
      }
      out.data[r * W.rows + o] = relu && acc < 0 ? 0 : acc;
    }
  }
  return out;
}

function concatColumns(parts: Matrix[]): Matrix {
  const rows = parts[0].rows;
  if (!parts.every((p) => p.rows === rows)) {
    throw new ExportValidationError("concat inputs disagree on row count");
  }
  const cols = parts.reduce((a, p) => a + p.cols, 0);
  const out: Matrix = { rows, cols, data: new Float64Array(rows * cols) };
  for (let r = 0; r < rows; r++) {
    let at = r * cols;
    for (const p of parts) {
      out.data.set(p.data.subarray(r * p.cols, (r + 1) * p.cols), at);
      at += p.cols;
    }
  }
  return out;
}

function addSquaredColumns(acc: Float64Array, x: Matrix): void {
  for (let r = 0; r < x.rows; r++) {
    const base = r * x.cols;
    for (let c = 0; c < x.cols; c++) {
      const v = x.data[base + c];
      acc[c] += v * v;
    }
  }
}

export interface StatsResult {
  /** toolkit layer name -> per-input-neuron sum of squares */
  sumsq: Map<string, Float64Array>;
  tokenCount: number;
  sourceDigest: string;
}

export function collectStats(manifest: ExportManifest): StatsResult {
  const { batches, batch_size: batchSize, seed, dataset } = manifest.calibration;
  if (!Number.isInteger(batches) || batches <= 0) {
    throw new ExportValidationError("calibration needs a positive batch count");
  }
  if (!Number.isInteger(batchSize) || batchSize <= 0) {
    throw new ExportValidationError("calibration needs a positive batch size");
  }
  const source = readContainer(resolvePath(manifest, manifest.source));
  const data = readContainer(resolvePath(manifest, dataset));

  const streams = new Map<string, Matrix>();
  const totalRows = batches * batchSize;
  for (const [streamId, tensorName] of Object.entries(manifest.forward.inputs)) {
    const tensor = data.tensors.get(tensorName);
    if (!tensor) {
      throw new ExportValidationError(`dataset lacks input tensor ${tensorName}`);
    }
    const m = matrixFromTensor(tensor.shape, tensor.data as Float32Array);
    if (m.rows < totalRows) {
      throw new ExportValidationError(
        `dataset stream ${tensorName} has ${m.rows} rows, need ${totalRows}`
      );
    }
    streams.set(streamId, m);
  }

  const weights = new Map<string, Matrix>();
  const hookName = new Map<string, string>(); // graph weight -> toolkit layer
  for (const node of manifest.forward.nodes) {
    if (node.op !== "linear") continue;
    const tensor = source.tensors.get(node.weight);
    if (!tensor) {
      throw new ExportValidationError(`forward graph references missing weight ${node.weight}`);
    }
    weights.set(node.weight, matrixFromTensor(tensor.shape, tensor.data as Float32Array));
    hookName.set(node.weight, toolkitName(manifest.rename, node.weight));
  }

  const sumsq = new Map<string, Float64Array>();
  for (const [weight, layer] of hookName) {
    if (!sumsq.has(layer)) {
      sumsq.set(layer, new Float64Array(weights.get(weight)!.cols));
    }
  }

  for (let b = 0; b < batches; b++) {
    const lo = b * batchSize;
    const values = new Map<string, Matrix>();
    for (const [streamId, m] of streams) {
      values.set(streamId, {
        rows: batchSize,
        cols: m.cols,
        data: m.data.subarray(lo * m.cols, (lo + batchSize) * m.cols),
      });
    }
    for (const node of manifest.forward.nodes) {
      if (node.op === "concat") {
        const parts = node.inputs.map((id) => mustGet(values, id, node));
        values.set(node.id, concatColumns(parts));
        continue;
      }
      const x = mustGet(values, node.input, node);
      addSquaredColumns(sumsq.get(hookName.get(node.weight)!)!, x);
      values.set(node.id, linearForward(x, weights.get(node.weight)!, node.relu));
    }
  }

  const digest = crypto
    .createHash("sha256")
    .update(`${seed}:${batches}:${batchSize}:${path.basename(dataset)}`)
    .digest("hex")
    .slice(0, 16);
  return { sumsq, tokenCount: totalRows, sourceDigest: digest };
}

function mustGet(values: Map<string, Matrix>, id: string, node: GraphNode): Matrix {
  const m = values.get(id);
  if (!m) {
    throw new ExportValidationError(`graph node ${node.id} reads undefined value ${id}`);
  }
  return m;
}

export function exportStats(manifest: ExportManifest): StatsResult {
  // names must align with the exported checkpoint
  const exported = buildExport(manifest);
  const result = collectStats(manifest);
  for (const layer of result.sumsq.keys()) {
    if (!exported.checkpoint.tensors.has(layer)) {
      throw new ExportValidationError(
        `stats layer ${layer} is absent from the exported checkpoint`
      );
    }
  }
  const tm: TensorMap = emptyTensorMap();
  tm.metadata = {
    token_count: String(result.tokenCount),
    source_digest: result.sourceDigest,
  };
  for (const [layer, acc] of result.sumsq) {
    const norm = new Float32Array(acc.length);
    for (let i = 0; i < acc.length; i++) {
      norm[i] = Math.sqrt(acc[i]);
    }
    tm.tensors.set(`${layer}.in_norm`, { dtype: "F32", shape: [acc.length], data: norm });
  }
  const statsPath = resolvePath(manifest, manifest.outputs.stats);
  fs.mkdirSync(path.dirname(statsPath), { recursive: true });
  writeContainer(tm, statsPath);
  return result;
}
