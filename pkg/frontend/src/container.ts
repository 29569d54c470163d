/**
 * Single-file tensor container IO.
 *
 * Layout: 8-byte little-endian header length, UTF-8 JSON header mapping
 * tensor names to {dtype, shape, data_offsets} plus an optional
 * "__metadata__" string map, then raw little-endian tensor data. Writes
 * are canonical (lexicographic tensor order, contiguous offsets, sorted
 * compact JSON) so identical maps produce identical bytes.
 */

import * as fs from "node:fs";

export type Dtype = "F32" | "U8";

export interface Tensor {
  dtype: Dtype;
  shape: number[];
  data: Float32Array | Uint8Array;
}

export interface TensorMap {
  tensors: Map<string, Tensor>;
  metadata: Record<string, string>;
}

export class ContainerError extends Error {}
export class ExportValidationError extends Error {}

const ITEM_SIZE: Record<Dtype, number> = { F32: 4, U8: 1 };
const METADATA_KEY = "__metadata__";

export function emptyTensorMap(): TensorMap {
  return { tensors: new Map(), metadata: {} };
}

export function f32Tensor(shape: number[], data: Float32Array): Tensor {
  return { dtype: "F32", shape, data };
}

function numel(shape: number[]): number {
  return shape.reduce((a, b) => a * b, 1);
}

function checkName(name: string): void {
  if (!name || name === METADATA_KEY) {
    throw new ExportValidationError(`tensor name ${JSON.stringify(name)} is reserved or empty`);
  }
  for (const ch of name) {
    const code = ch.codePointAt(0)!;
    if (code < 0x20 || code === 0x7f) {
      throw new ExportValidationError(`tensor name ${JSON.stringify(name)} contains control characters`);
    }
  }
}

/** Canonical header bytes: sorted names, contiguous offsets, fixed key order. */
function encodeHeader(tm: TensorMap): { header: Buffer; ordered: [string, Tensor][] } {
  const ordered = [...tm.tensors.entries()].sort((a, b) =>
    a[0] < b[0] ? -1 : a[0] > b[0] ? 1 : 0
  );
  const parts: string[] = [];
  let offset = 0;
  const metaKeys = Object.keys(tm.metadata).sort();
  const entries: { key: string; json: string }[] = [];
  for (const [name, tensor] of ordered) {
    checkName(name);
    const nbytes = numel(tensor.shape) * ITEM_SIZE[tensor.dtype];
    if (tensor.data.byteLength !== nbytes) {
      throw new ExportValidationError(
        `tensor ${name}: shape [${tensor.shape}] wants ${nbytes} bytes, buffer has ${tensor.data.byteLength}`
      );
    }
    const json =
      `{"data_offsets":[${offset},${offset + nbytes}],` +
      `"dtype":${JSON.stringify(tensor.dtype)},` +
      `"shape":[${tensor.shape.join(",")}]}`;
    entries.push({ key: name, json });
    offset += nbytes;
  }
  if (metaKeys.length > 0) {
    const body = metaKeys
      .map((k) => `${JSON.stringify(k)}:${JSON.stringify(tm.metadata[k])}`)
      .join(",");
    entries.push({ key: METADATA_KEY, json: `{${body}}` });
  }
  entries.sort((a, b) => (a.key < b.key ? -1 : a.key > b.key ? 1 : 0));
  for (const e of entries) {
    parts.push(`${JSON.stringify(e.key)}:${e.json}`);
  }
  return { header: Buffer.from(`{${parts.join(",")}}`, "utf-8"), ordered };
}

export function writeContainer(tm: TensorMap, path: string): void {
  const { header, ordered } = encodeHeader(tm);
  const lengthPrefix = Buffer.alloc(8);
  lengthPrefix.writeBigUInt64LE(BigInt(header.length));
  const chunks: Buffer[] = [lengthPrefix, header];
  for (const [, tensor] of ordered) {
    chunks.push(Buffer.from(tensor.data.buffer, tensor.data.byteOffset, tensor.data.byteLength));
  }
  fs.writeFileSync(path, Buffer.concat(chunks));
}

export function readContainer(path: string): TensorMap {
  let raw: Buffer;
  try {
    raw = fs.readFileSync(path);
  } catch (err) {
    throw new ContainerError(`cannot open container ${path}: ${err}`);
  }
  if (raw.length < 8) {
    throw new ContainerError(`${path}: truncated header length`);
  }
  const headerLen = Number(raw.readBigUInt64LE(0));
  if (raw.length < 8 + headerLen) {
    throw new ContainerError(`${path}: truncated header`);
  }
  let header: Record<string, unknown>;
  try {
    header = JSON.parse(raw.subarray(8, 8 + headerLen).toString("utf-8"));
  } catch (err) {
    throw new ContainerError(`${path}: malformed header JSON: ${err}`);
  }
  if (typeof header !== "object" || header === null || Array.isArray(header)) {
    throw new ContainerError(`${path}: header is not a JSON object`);
  }
  const dataStart = 8 + headerLen;
  const dataLen = raw.length - dataStart;

  const tm = emptyTensorMap();
  const spans: { name: string; begin: number; end: number }[] = [];
  for (const [name, info] of Object.entries(header)) {
    if (name === METADATA_KEY) {
      const meta = info as Record<string, unknown>;
      for (const [k, v] of Object.entries(meta)) {
        if (typeof v !== "string") {
          throw new ContainerError(`${path}: __metadata__ must map strings to strings`);
        }
        tm.metadata[k] = v;
      }
      continue;
    }
    const entry = info as { dtype?: unknown; shape?: unknown; data_offsets?: unknown };
    const dtype = entry.dtype;
    if (dtype !== "F32" && dtype !== "U8") {
      throw new ContainerError(`${path}: tensor ${name} has unsupported dtype ${dtype}`);
    }
    const shape = entry.shape;
    if (!Array.isArray(shape) || !shape.every((d) => Number.isInteger(d) && d >= 0)) {
      throw new ContainerError(`${path}: tensor ${name} has invalid shape`);
    }
    const offsets = entry.data_offsets;
    if (!Array.isArray(offsets) || offsets.length !== 2) {
      throw new ContainerError(`${path}: tensor ${name} has invalid data_offsets`);
    }
    const [begin, end] = offsets as [number, number];
    const expected = numel(shape as number[]) * ITEM_SIZE[dtype as Dtype];
    if (!(begin >= 0 && begin <= end && end <= dataLen)) {
      throw new ContainerError(`${path}: tensor ${name} offsets out of bounds`);
    }
    if (end - begin !== expected) {
      throw new ContainerError(
        `${path}: tensor ${name} size mismatch: shape wants ${expected} bytes, offsets give ${end - begin}`
      );
    }
    spans.push({ name, begin, end });
    const bytes = raw.subarray(dataStart + begin, dataStart + end);
    const copy = Buffer.alloc(bytes.length);
    bytes.copy(copy);
    const data =
      dtype === "F32"
        ? new Float32Array(copy.buffer, copy.byteOffset, expected / 4)
        : new Uint8Array(copy.buffer, copy.byteOffset, expected);
    tm.tensors.set(name, { dtype: dtype as Dtype, shape: shape as number[], data });
  }
  spans.sort((a, b) => a.begin - b.begin || (a.name < b.name ? -1 : 1));
  let prevEnd = 0;
  for (const span of spans) {
    if (span.begin < prevEnd) {
      throw new ContainerError(`${path}: tensor ${span.name} overlaps the previous tensor`);
    }
    prevEnd = Math.max(prevEnd, span.end);
  }
  return tm;
}
