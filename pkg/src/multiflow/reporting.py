"""Sparsity-report emission: delimited output plus rendered figures."""

from __future__ import annotations

import csv
import json
from pathlib import Path

from .masking import PruneMask, SparsityReport

CSV_COLUMNS = ["modality", "depth_index", "layer", "size", "kept", "sparsity"]


def method_label(criterion: str, policy: str, inverted: bool) -> str:
    """Canonical series label for a (criterion, policy, inverted) combo."""
    if criterion == "multiflow" and policy == "multimodal_magnitude":
        return "multiflow_inverted" if inverted else "multiflow"
    if criterion == "multiflow" and policy == "global_score":
        return "wo_distribution"
    if criterion == "multiflow" and policy == "global_magnitude":
        return "wo_multimodality"
    if criterion == "magnitude" and policy == "global_magnitude":
        return "omp"
    label = f"{criterion}+{policy}"
    return label + "+inverted" if inverted else label


def report_to_dict(report: SparsityReport) -> dict:
    return {
        "layers": [
            {
                "layer": row.layer,
                "modality": row.modality,
                "depth_index": row.depth_index,
                "size": row.size,
                "kept": row.kept,
                "sparsity": row.sparsity,
            }
            for row in report.rows
        ],
        "per_modality": dict(report.per_modality),
        "global_sparsity": report.global_sparsity,
        "collapsed_layers": list(report.collapsed_layers),
    }


def write_report(
    report: SparsityReport, base, mask: PruneMask | None = None, budgets=None
) -> list[Path]:
    """Write BASE.csv, BASE.json and BASE.png for a single mask."""
    base = Path(base)
    base.parent.mkdir(parents=True, exist_ok=True)
    written = []

    csv_path = base.with_suffix(".csv")
    with open(csv_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(CSV_COLUMNS)
        for row in report.rows:
            writer.writerow(
                [row.modality, row.depth_index, row.layer, row.size, row.kept, repr(row.sparsity)]
            )
    written.append(csv_path)

    payload = report_to_dict(report)
    if mask is not None:
        payload["mask"] = {
            "criterion": mask.criterion,
            "policy": mask.policy,
            "keep_ratio": mask.keep_ratio,
            "inverted": mask.inverted,
        }
    if budgets is not None:
        payload["budgets"] = budgets.to_dict()
    json_path = base.with_suffix(".json")
    json_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    written.append(json_path)

    label = method_label(mask.criterion, mask.policy, mask.inverted) if mask else "mask"
    png_path = base.with_suffix(".png")
    _plot_series({label: report}, png_path)
    written.append(png_path)
    return written


def write_combined_report(
    entries: list[tuple[str, SparsityReport]], base
) -> list[Path]:
    """Multi-mask overlay: one CSV/JSON row per (method, modality, depth)."""
    base = Path(base)
    base.parent.mkdir(parents=True, exist_ok=True)
    written = []

    csv_path = base.with_suffix(".csv")
    with open(csv_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["method"] + CSV_COLUMNS)
        for label, report in entries:
            for row in report.rows:
                writer.writerow(
                    [label, row.modality, row.depth_index, row.layer, row.size, row.kept, repr(row.sparsity)]
                )
    written.append(csv_path)

    json_path = base.with_suffix(".json")
    json_path.write_text(
        json.dumps(
            {label: report_to_dict(report) for label, report in entries},
            indent=2,
            sort_keys=True,
        )
        + "\n"
    )
    written.append(json_path)

    png_path = base.with_suffix(".png")
    _plot_series(dict(entries), png_path)
    written.append(png_path)
    return written


def _plot_series(series: dict[str, SparsityReport], path) -> None:
    """Per-modality panels of layer-wise sparsity, one line per method."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    modalities: list[str] = []
    for report in series.values():
        for row in report.rows:
            if row.modality not in modalities:
                modalities.append(row.modality)
    fig, axes = plt.subplots(
        1, max(len(modalities), 1), figsize=(3.2 * max(len(modalities), 1), 3.2), squeeze=False
    )
    for ax, modality in zip(axes[0], modalities):
        for label, report in series.items():
            points = sorted(
                (row.depth_index, row.sparsity)
                for row in report.rows
                if row.modality == modality
            )
            if points:
                ax.plot([p[0] for p in points], [p[1] for p in points], marker="o", label=label)
        ax.set_title(modality)
        ax.set_xlabel("layer depth")
        ax.set_ylim(-0.05, 1.05)
    axes[0][0].set_ylabel("sparsity")
    axes[0][-1].legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
