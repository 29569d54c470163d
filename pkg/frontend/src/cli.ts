#!/usr/bin/env node
/**
 * multiflow-export: bridge real checkpoints into the pruning toolkit.
 *
 * Usage:
 *   multiflow-export export-checkpoint --manifest manifest.json
 *   multiflow-export export-stats --manifest manifest.json
 *
 * Exit codes: 0 success, 2 validation failure, 3 IO/format error.
 */

import { ContainerError, ExportValidationError } from "./container";
import { exportCheckpoint } from "./exporter";
import { exportStats } from "./forward";
import { loadManifest, resolvePath } from "./manifest";

function parseArgs(argv: string[]): { command: string; manifest?: string } {
  const [command, ...rest] = argv;
  const args: { command: string; manifest?: string } = { command: command ?? "" };
  for (let i = 0; i < rest.length; i++) {
    switch (rest[i]) {
      case "--manifest":
      case "-m":
        args.manifest = rest[++i];
        break;
      case "--help":
      case "-h":
        printHelp();
        process.exit(0);
        break;
      default:
        console.error(`unknown argument: ${rest[i]}`);
        process.exit(2);
    }
  }
  return args;
}

function printHelp(): void {
  console.log(
    [
      "multiflow-export <command> --manifest <manifest.json>",
      "",
      "commands:",
      "  export-checkpoint   dump tensors under toolkit names + model-spec JSON",
      "  export-stats        replay the forward graph and write activation norms",
      "",
      "Relative paths inside the manifest resolve against its directory.",
    ].join("\n")
  );
}

export function main(argv: string[]): number {
  const args = parseArgs(argv);
  if (!args.command) {
    printHelp();
    return 2;
  }
  if (!args.manifest) {
    console.error("error: --manifest is required");
    return 2;
  }
  try {
    const manifest = loadManifest(args.manifest);
    if (args.command === "export-checkpoint") {
      const result = exportCheckpoint(manifest);
      console.log(
        `exported ${result.checkpoint.tensors.size} tensors ` +
          `(${result.spec.layers.length} prunable) -> ` +
          resolvePath(manifest, manifest.outputs.checkpoint)
      );
      return 0;
    }
    if (args.command === "export-stats") {
      const result = exportStats(manifest);
      console.log(
        `collected norms for ${result.sumsq.size} layers over ` +
          `token_count=${result.tokenCount} -> ` +
          resolvePath(manifest, manifest.outputs.stats)
      );
      return 0;
    }
    console.error(`unknown command: ${args.command}`);
    return 2;
  } catch (err) {
    if (err instanceof ExportValidationError) {
      console.error(`error: ${err.message}`);
      return 2;
    }
    if (err instanceof ContainerError || (err as NodeJS.ErrnoException)?.code) {
      console.error(`error: ${(err as Error).message}`);
      return 3;
    }
    throw err;
  }
}

if (require.main === module) {
  process.exit(main(process.argv.slice(2)));
}
