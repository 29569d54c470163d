"""Command-line pipeline: calibrate -> prune -> report -> apply, plus the
toy benchmark driver.

Exit codes: 0 success, 2 validation failure, 3 IO/format error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .budgeting import POLICIES
from .calibration import NormAccumulator, finalize, read_stats, write_stats
from .errors import FormatError, ValidationError
from .masking import apply_mask, read_mask, sparsity_report, verify_mask, write_mask
from .modelspec import load_model_spec, load_model_spec_file, resolve_tying
from .pipeline import make_mask
from .reporting import method_label, write_combined_report, write_report
from .scoring import CRITERIA
from .tensorstore import TensorMap, read_container, write_container
from .toy.data import SyntheticPairSet
from .toy.experiment import run_experiment
from .toy.model import ToyVLM


@dataclass
class RunConfig:
    checkpoint: str
    model_spec: str
    stats: str | None
    criterion: str
    policy: str
    sparsity: float
    invert: bool
    seed: int
    out_mask: str
    out_report: str | None


def toy_source_digest(seed: int, batches: int, batch_size: int) -> str:
    return hashlib.sha256(f"toy:{seed}:{batches}:{batch_size}".encode()).hexdigest()[:16]


def _apply_config_file(args: argparse.Namespace) -> argparse.Namespace:
    """Values from --config override command-line flags."""
    if getattr(args, "config", None) is None:
        return args
    try:
        with open(args.config, "r", encoding="utf-8") as f:
            overrides = json.load(f)
    except OSError as exc:
        raise FormatError(f"cannot read config {args.config}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"config {args.config} is not valid JSON: {exc}") from exc
    if not isinstance(overrides, dict):
        raise ValidationError("--config file must hold a JSON object")
    for key, value in overrides.items():
        attr = key.replace("-", "_")
        if not hasattr(args, attr):
            raise ValidationError(f"config key {key!r} is not a known flag")
        setattr(args, attr, value)
    return args


def cmd_calibrate(args) -> int:
    if args.batches <= 0:
        raise ValidationError("no calibration data: --batches must be positive")
    if args.batch_size <= 0:
        raise ValidationError("--batch-size must be positive")
    checkpoint = read_container(args.checkpoint)
    prunable = load_model_spec_file(args.model_spec, checkpoint)
    model = ToyVLM.from_tensor_map(checkpoint)
    n_rows = args.batches * args.batch_size
    dataset = SyntheticPairSet(args.seed, n_pairs=n_rows, input_dim=model.d_in)
    acc = NormAccumulator(prunable)
    spec_layers = set(prunable.layer_names())
    engine = model.as_float64()
    for xv, xt in dataset.batches(0, args.batches, args.batch_size):
        cache: dict = {}
        engine.forward_pairs(xv, xt, cache)
        for layer, batch in engine.layer_inputs(cache).items():
            if layer in spec_layers:
                acc.accumulate(layer, batch)
    stats = finalize(
        acc, source_digest=toy_source_digest(args.seed, args.batches, args.batch_size)
    )
    write_stats(stats, args.out)
    if args.dump_inputs:
        inputs = TensorMap(
            metadata={
                "batches": str(args.batches),
                "batch_size": str(args.batch_size),
                "seed": str(args.seed),
            }
        )
        inputs.put("vision_input", dataset.xv[:n_rows])
        inputs.put("text_input", dataset.xt[:n_rows])
        write_container(inputs, args.dump_inputs)
    print(f"calibrated {len(prunable.layers)} layers over token_count={stats.token_count}")
    return 0


def cmd_prune(args) -> int:
    config = RunConfig(
        checkpoint=args.checkpoint,
        model_spec=args.model_spec,
        stats=args.stats,
        criterion=args.criterion,
        policy=args.policy,
        sparsity=args.sparsity,
        invert=args.invert,
        seed=args.seed,
        out_mask=args.out_mask,
        out_report=args.out_report,
    )
    if config.criterion not in CRITERIA:
        raise ValidationError(f"unknown criterion {config.criterion!r}; choose from {CRITERIA}")
    if config.policy not in POLICIES:
        raise ValidationError(f"unknown policy {config.policy!r}; choose from {POLICIES}")
    if not 0.0 <= config.sparsity <= 1.0:
        raise ValidationError(f"sparsity must be in [0,1], got {config.sparsity}")
    checkpoint = read_container(config.checkpoint)
    prunable = load_model_spec_file(config.model_spec, checkpoint)
    stats = read_stats(config.stats) if config.stats else None
    mask, budgets = make_mask(
        prunable,
        checkpoint,
        config.criterion,
        config.policy,
        config.sparsity,
        stats=stats,
        seed=config.seed,
        invert=config.invert,
    )
    violations = verify_mask(mask, budgets, resolve_tying(prunable))
    if violations:
        for v in violations:
            print(f"mask violation: {v}", file=sys.stderr)
        return 2
    write_mask(mask, config.out_mask)
    report = sparsity_report(mask, prunable)
    report_base = config.out_report
    if report_base is None:
        report_base = str(Path(config.out_mask).with_suffix("")) + "_report"
    write_report(report, report_base, mask, budgets=budgets)
    if report.collapsed_layers:
        print(
            f"warning: {len(report.collapsed_layers)} collapsed layer(s): "
            + ", ".join(report.collapsed_layers),
            file=sys.stderr,
        )
    print(
        f"pruned to global sparsity {report.global_sparsity:.6f} "
        f"(criterion={config.criterion}, policy={config.policy}, "
        f"keep={budgets.total_keep()})"
    )
    return 0


def cmd_apply(args) -> int:
    checkpoint = read_container(args.checkpoint)
    mask = read_mask(args.mask)
    pruned = apply_mask(checkpoint, mask)
    write_container(pruned, args.out)
    kept = sum(int(m.sum()) for m in mask.masks.values())
    nonzero = sum(
        int(np.count_nonzero(pruned.get(name))) for name in mask.masks if name in pruned
    )
    print(f"applied mask: kept={kept} nonzero={nonzero} -> {args.out}")
    return 0


def cmd_report(args) -> int:
    seen = []
    for path in args.masks:
        if path in seen:
            print(f"warning: duplicate mask path {path} skipped", file=sys.stderr)
            continue
        seen.append(path)
    spec_config = json.loads(Path(args.model_spec).read_text())
    entries = []
    labels: dict[str, int] = {}
    for path in seen:
        mask = read_mask(path)
        shapes = TensorMap()
        for layer, m in mask.masks.items():
            shapes.put(layer, m)
        try:
            prunable = load_model_spec(spec_config, shapes)
        except ValidationError as exc:
            raise ValidationError(f"mask {path} is incompatible with the model spec: {exc}")
        label = method_label(mask.criterion, mask.policy, mask.inverted)
        if label in labels:
            labels[label] += 1
            label = f"{label}#{labels[label]}"
        else:
            labels[label] = 1
        entries.append((label, sparsity_report(mask, prunable)))
    written = write_combined_report(entries, args.out)
    print("wrote " + ", ".join(str(p) for p in written))
    return 0


def cmd_toybench(args) -> int:
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    sparsities = [float(s) for s in args.sparsities.split(",") if s.strip()]
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    if not methods or not sparsities or not seeds:
        raise ValidationError("toybench needs --methods, --sparsities and --seeds")
    results = run_experiment(
        methods,
        sparsities,
        seeds,
        args.out_dir,
        steps=args.steps,
        pretrain_steps=args.pretrain_steps,
        data_seed=args.data_seed,
    )
    print(f"dense accuracy: {results['dense_accuracy']:.4f}")
    for method, by_sigma in sorted(results["medians"].items()):
        for sigma, acc in sorted(by_sigma.items(), key=lambda kv: float(kv[0])):
            print(f"  {method} @ sparsity {sigma}: median accuracy {acc:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="multiflow",
        description="Gradient-free information-flow pruning for multimodal checkpoints",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="collect activation norms with the toy engine")
    p.add_argument("--model-spec", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--batches", type=int, default=256)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--dump-inputs", default=None, help="also write the raw input streams")
    p.add_argument("--config", default=None, help="JSON file overriding flags")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("prune", help="score, budget and emit a pruning mask")
    p.add_argument("--model-spec", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--stats", default=None)
    p.add_argument("--criterion", default="multiflow", help=f"one of {', '.join(CRITERIA)}")
    p.add_argument("--policy", default="multimodal_magnitude", help=f"one of {', '.join(POLICIES)}")
    p.add_argument("--sparsity", type=float, required=True)
    p.add_argument("--invert", action="store_true", help="keep the lowest-scored weights")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-mask", required=True)
    p.add_argument("--out-report", default=None, help="basename for CSV/JSON/PNG report")
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("apply", help="zero out masked weights in a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_apply)

    p = sub.add_parser("report", help="combined layer-wise sparsity report for masks")
    p.add_argument("--model-spec", required=True)
    p.add_argument("--out", required=True, help="basename for CSV/JSON/PNG output")
    p.add_argument("masks", nargs="+")
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("toybench", help="prune-then-finetune toy experiments")
    p.add_argument("--methods", required=True, help="comma-separated method names")
    p.add_argument("--sparsities", required=True, help="comma-separated global sparsities")
    p.add_argument("--seeds", required=True, help="comma-separated fine-tuning seeds")
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--pretrain-steps", type=int, default=2000)
    p.add_argument("--data-seed", type=int, default=7)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_toybench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args = _apply_config_file(args)
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
