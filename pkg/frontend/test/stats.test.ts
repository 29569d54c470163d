import * as fs from "node:fs";
import * as os from "node:os";
import * as path from "node:path";

import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { readContainer } from "../src/container";
import { exportStats } from "../src/forward";
import { loadManifest } from "../src/manifest";

const TESTDATA = path.join(__dirname, "..", "testdata");

let tmp: string;
beforeAll(() => {
  tmp = fs.mkdtempSync(path.join(os.tmpdir(), "mfx-stats-"));
});
afterAll(() => {
  fs.rmSync(tmp, { recursive: true, force: true });
});

function manifestInTmp(tag: string, mutate?: (m: any) => void): string {
  const raw = JSON.parse(fs.readFileSync(path.join(TESTDATA, "manifest.json"), "utf-8"));
  raw.source = path.join(TESTDATA, "source_model.safetensors");
  raw.calibration.dataset = path.join(TESTDATA, "reference_batches.safetensors");
  raw.outputs = {
    checkpoint: path.join(tmp, tag, "checkpoint.safetensors"),
    model_spec: path.join(tmp, tag, "model_spec.json"),
    stats: path.join(tmp, tag, "stats.safetensors"),
  };
  if (mutate) mutate(raw);
  const p = path.join(tmp, `manifest-${tag}.json`);
  fs.writeFileSync(p, JSON.stringify(raw));
  return p;
}

describe("export-stats", () => {
  it("matches the primary engine within 1e-5 relative, per neuron", () => {
    const manifest = loadManifest(manifestInTmp("golden"));
    exportStats(manifest);
    const ours = readContainer(manifest.outputs.stats);
    const golden = readContainer(path.join(TESTDATA, "golden_stats.safetensors"));

    expect(ours.metadata.token_count).toBe(golden.metadata.token_count);
    const goldenNames = [...golden.tensors.keys()].sort();
    expect([...ours.tensors.keys()].sort()).toEqual(goldenNames);
    for (const name of goldenNames) {
      const a = ours.tensors.get(name)!.data as Float32Array;
      const b = golden.tensors.get(name)!.data as Float32Array;
      expect(a.length).toBe(b.length);
      for (let i = 0; i < a.length; i++) {
        const rel = Math.abs(a[i] - b[i]) / Math.max(Math.abs(b[i]), 1e-12);
        expect(rel, `${name}[${i}]: ${a[i]} vs ${b[i]}`).toBeLessThan(1e-5);
      }
    }
  });

  it("is deterministic: same loader spec twice gives identical bytes", () => {
    const m1 = loadManifest(manifestInTmp("det1"));
    const m2 = loadManifest(manifestInTmp("det2"));
    exportStats(m1);
    exportStats(m2);
    expect(
      fs.readFileSync(m1.outputs.stats).equals(fs.readFileSync(m2.outputs.stats))
    ).toBe(true);
  });

  it("rejects zero calibration batches", () => {
    const p = manifestInTmp("zero", (m) => {
      m.calibration.batches = 0;
    });
    expect(() => exportStats(loadManifest(p))).toThrow(/positive batch count/);
  });

  it("rejects datasets with too few rows", () => {
    const p = manifestInTmp("short", (m) => {
      m.calibration.batches = 10_000;
    });
    expect(() => exportStats(loadManifest(p))).toThrow(/rows/);
  });

  it("pools statistics when two call-sites share one toolkit layer", () => {
    // run the vision tower twice under names that both map to vision.*.weight:
    // the pooled sums of squares must be exactly twice the single-pass sums
    const single = loadManifest(manifestInTmp("single"));
    const singleStats = exportStats(single);
    const doubled = loadManifest(
      manifestInTmp("tied", (m) => {
        const visionNodes = m.forward.nodes.filter((n: any) =>
          String(n.weight ?? "").startsWith("visual.")
        );
        const clones = visionNodes.map((n: any, i: number) => ({
          ...n,
          id: `${n.id}_again`,
          input: i === 0 ? n.input : `${n.input}_again`,
        }));
        m.forward.nodes = [...m.forward.nodes, ...clones];
      })
    );
    const tiedStats = exportStats(doubled);
    for (const name of ["vision.0.weight", "vision.1.weight", "vision.2.weight"]) {
      const a = singleStats.sumsq.get(name)!;
      const b = tiedStats.sumsq.get(name)!;
      for (let i = 0; i < a.length; i++) {
        expect(Math.abs(b[i] - 2 * a[i])).toBeLessThan(1e-9 * Math.max(1, a[i]));
      }
    }
  });
});
