"""Prune-then-finetune experiment driver for the toy benchmark.

Pretrains the dense two-tower model on synthetic pairs, collects
calibration statistics, then for every (method, sparsity, seed) builds a
mask, fine-tunes under it and records held-out retrieval accuracy.
Everything is seed-deterministic.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..calibration import NormAccumulator, finalize, write_stats
from ..errors import ValidationError
from ..masking import sparsity_report, verify_mask, write_mask
from ..modelspec import load_model_spec, resolve_tying
from ..pipeline import make_mask
from ..tensorstore import write_container
from .data import SyntheticPairSet
from .gradscore import itersnip_mask, snip_mask
from .model import ToyVLM, toy_model_spec
from .train import TrainingDiverged, train

# method name -> (criterion, policy, invert)
SCORE_METHODS = {
    "multiflow": ("multiflow", "multimodal_magnitude", False),
    "multiflow_inverted": ("multiflow", "multimodal_magnitude", True),
    "wo_distribution": ("multiflow", "global_score", False),
    "wo_multimodality": ("multiflow", "global_magnitude", False),
    "omp": ("magnitude", "global_magnitude", False),
    "lamp": ("lamp", "global_score", False),
    "l2norm": ("l2norm", "global_score", False),
    "random": ("random", "global_score", False),
    "edge_only": ("multiflow_edge_only", "multimodal_magnitude", False),
    "nodes_only": ("multiflow_nodes_only", "multimodal_magnitude", False),
}
GRADIENT_METHODS = ("snip", "itersnip")
METHOD_NAMES = tuple(SCORE_METHODS) + GRADIENT_METHODS + ("dense",)

CALIB_BATCHES = 256
CALIB_BATCH_SIZE = 32
ITERSNIP_ROUNDS = 8


@dataclass
class ExperimentConfig:
    methods: list[str]
    sparsities: list[float]
    seeds: list[int]
    steps: int = 2000
    pretrain_steps: int = 2000
    data_seed: int = 7
    lr: float = 0.1
    batch_size: int = 32
    threads: int = 1


def _threads_from_env() -> int:
    raw = os.environ.get("MULTIFLOW_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValidationError(f"MULTIFLOW_THREADS must be an integer, got {raw!r}")
    if n < 1:
        raise ValidationError(f"MULTIFLOW_THREADS must be >= 1, got {n}")
    return n


def pretrain(config: ExperimentConfig):
    """Dense pretraining run; the anchor every method prunes from."""
    dataset = SyntheticPairSet(config.data_seed)
    model = ToyVLM.initialize(seed=config.data_seed + 1)
    result = train(
        model,
        dataset,
        config.pretrain_steps,
        lr=config.lr,
        batch_size=config.batch_size,
        seed=config.data_seed,
    )
    return dataset, result.model, result.accuracy


def calibration_stats(model: ToyVLM, dataset: SyntheticPairSet, prunable):
    """Pooled activation norms over the toy calibration stream."""
    acc = NormAccumulator(prunable)
    engine = model.as_float64()
    for xv, xt in dataset.batches(0, CALIB_BATCHES, CALIB_BATCH_SIZE):
        cache: dict = {}
        engine.forward_pairs(xv, xt, cache)
        for layer, batch in engine.layer_inputs(cache).items():
            acc.accumulate(layer, batch)
    digest = hashlib.sha256(
        f"toy:{dataset.seed}:{CALIB_BATCHES}:{CALIB_BATCH_SIZE}".encode()
    ).hexdigest()[:16]
    return finalize(acc, source_digest=digest)


def build_method_mask(method, prunable, model, stats, dataset, sparsity, seed):
    """Mask + budget plan for one method at one sparsity."""
    weights = model.weights
    if method in SCORE_METHODS:
        criterion, policy, invert = SCORE_METHODS[method]
        return make_mask(
            prunable, weights, criterion, policy, sparsity,
            stats=stats, seed=seed, invert=invert,
        )
    if method == "snip":
        batches = list(dataset.batches(0, CALIB_BATCHES, CALIB_BATCH_SIZE))
        return snip_mask(prunable, model, batches, sparsity)
    if method == "itersnip":
        batches = list(dataset.batches(0, CALIB_BATCHES, CALIB_BATCH_SIZE))
        return itersnip_mask(prunable, model, batches, sparsity, rounds=ITERSNIP_ROUNDS)
    raise ValidationError(f"unknown method {method!r}; known: {METHOD_NAMES}")


def _run_one(args):
    model_weights, dataset_seed, mask, steps, lr, batch_size, seed = args
    dataset = SyntheticPairSet(dataset_seed)
    model = ToyVLM(model_weights)
    try:
        result = train(
            model, dataset, steps, mask=mask, lr=lr, batch_size=batch_size, seed=seed
        )
        return result.accuracy, "ok"
    except TrainingDiverged:
        return float("nan"), "diverged"


def run_experiment(
    methods: list[str],
    sparsities: list[float],
    seeds: list[int],
    out_dir,
    steps: int = 2000,
    pretrain_steps: int = 2000,
    data_seed: int = 7,
    lr: float = 0.1,
    threads: int | None = None,
) -> dict:
    """Full results table; writes containers, CSV/JSON and a figure."""
    for method in methods:
        if method not in METHOD_NAMES:
            raise ValidationError(f"unknown method {method!r}; known: {METHOD_NAMES}")
    config = ExperimentConfig(
        list(methods), [float(s) for s in sparsities], [int(s) for s in seeds],
        steps=steps, pretrain_steps=pretrain_steps, data_seed=data_seed, lr=lr,
        threads=threads if threads is not None else _threads_from_env(),
    )
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    dataset, model, dense_accuracy = pretrain(config)
    checkpoint = model.to_tensor_map(metadata={"source": "toybench"})
    write_container(checkpoint, out / "checkpoint.safetensors")
    spec_config = toy_model_spec(model)
    (out / "model_spec.json").write_text(
        json.dumps(spec_config, indent=2, sort_keys=True) + "\n"
    )
    prunable = load_model_spec(spec_config, checkpoint)
    stats = calibration_stats(model, dataset, prunable)
    write_stats(stats, out / "stats.safetensors")

    # masks are deterministic per (method, sparsity) except the random baseline
    mask_cache: dict = {}
    jobs = []
    job_meta = []
    for method in config.methods:
        for sigma in config.sparsities if method != "dense" else [0.0]:
            for seed in config.seeds:
                if method == "dense":
                    mask, collapsed = None, ()
                else:
                    key = (method, sigma, seed if method == "random" else None)
                    if key not in mask_cache:
                        prune_mask, plan = build_method_mask(
                            method, prunable, model, stats, dataset, sigma, seed
                        )
                        violations = verify_mask(prune_mask, plan, resolve_tying(prunable))
                        if violations:
                            raise ValidationError(f"{method} mask invalid: {violations}")
                        report = sparsity_report(prune_mask, prunable)
                        mask_cache[key] = (prune_mask, report.collapsed_layers)
                        if seed == config.seeds[0]:
                            write_mask(
                                prune_mask,
                                out / f"mask_{method}_s{int(round(sigma * 100)):02d}.safetensors",
                            )
                    prune_mask, collapsed = mask_cache[key]
                    mask = prune_mask.masks
                jobs.append(
                    (model.weights, config.data_seed, mask, config.steps,
                     config.lr, config.batch_size, seed)
                )
                job_meta.append((method, sigma, seed, collapsed))

    if config.threads > 1:
        with ProcessPoolExecutor(max_workers=config.threads) as pool:
            outcomes = list(pool.map(_run_one, jobs))
    else:
        outcomes = [_run_one(job) for job in jobs]

    runs = []
    for (method, sigma, seed, collapsed), (accuracy, status) in zip(job_meta, outcomes):
        runs.append(
            {
                "method": method,
                "sparsity": sigma,
                "seed": seed,
                "accuracy": accuracy,
                "status": status,
                "collapsed_layers": list(collapsed),
            }
        )

    medians: dict[str, dict[str, float]] = {}
    for run in runs:
        medians.setdefault(run["method"], {})
    for method in medians:
        for sigma in {r["sparsity"] for r in runs if r["method"] == method}:
            vals = [
                r["accuracy"]
                for r in runs
                if r["method"] == method and r["sparsity"] == sigma and r["status"] == "ok"
            ]
            medians[method][f"{sigma:g}"] = float(np.median(vals)) if vals else float("nan")

    results = {
        "config": {
            "methods": config.methods,
            "sparsities": config.sparsities,
            "seeds": config.seeds,
            "steps": config.steps,
            "pretrain_steps": config.pretrain_steps,
            "data_seed": config.data_seed,
            "lr": config.lr,
        },
        "dense_accuracy": dense_accuracy,
        "runs": runs,
        "medians": medians,
    }
    (out / "results.json").write_text(json.dumps(results, indent=2, sort_keys=True) + "\n")
    with open(out / "results.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["method", "sparsity", "seed", "accuracy", "status", "collapsed_layers"])
        for run in runs:
            writer.writerow(
                [
                    run["method"],
                    f"{run['sparsity']:g}",
                    run["seed"],
                    repr(run["accuracy"]),
                    run["status"],
                    ";".join(run["collapsed_layers"]),
                ]
            )
    _plot_results(results, out / "results.png")
    return results


def _plot_results(results: dict, path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for method, by_sigma in sorted(results["medians"].items()):
        pairs = sorted((float(s), v) for s, v in by_sigma.items())
        if not pairs:
            continue
        ax.plot(
            [p[0] for p in pairs], [p[1] for p in pairs], marker="o", label=method
        )
    ax.axhline(results["dense_accuracy"], color="gray", linestyle="--", label="dense")
    ax.set_xlabel("global sparsity")
    ax.set_ylabel("retrieval accuracy (median over seeds)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
