"""Regenerate the exporter test fixtures from the primary toolkit.

Writes a source-style checkpoint (foreign tensor names plus extra
non-prunable tensors), the calibration batch file, golden stats from the
primary calibration engine, and the export manifest.

Run from the repo root:  python3 frontend/testdata/generate.py
"""

import json
from pathlib import Path

import numpy as np

from multiflow.cli import main
from multiflow.tensorstore import TensorMap, write_container
from multiflow.toy.model import ToyVLM, toy_model_spec

HERE = Path(__file__).parent
SEED, BATCHES, BATCH_SIZE = 5, 32, 32

RENAME = [
    {"pattern": "^visual\\.blocks\\.(\\d+)\\.w$", "replace": "vision.$1.weight"},
    {"pattern": "^textual\\.blocks\\.(\\d+)\\.w$", "replace": "text.$1.weight"},
    {"pattern": "^joint\\.blocks\\.(\\d+)\\.w$", "replace": "fusion.$1.weight"},
]
SOURCE_OF = {
    **{f"vision.{i}.weight": f"visual.blocks.{i}.w" for i in range(3)},
    **{f"text.{i}.weight": f"textual.blocks.{i}.w" for i in range(3)},
    **{f"fusion.{i}.weight": f"joint.blocks.{i}.w" for i in range(2)},
}


def forward_nodes():
    nodes = []
    prev = "vision"
    for i in range(3):
        nodes.append({"op": "linear", "id": f"v{i}", "input": prev,
                      "weight": f"visual.blocks.{i}.w", "relu": True})
        prev = f"v{i}"
    prev = "text"
    for i in range(3):
        nodes.append({"op": "linear", "id": f"t{i}", "input": prev,
                      "weight": f"textual.blocks.{i}.w", "relu": True})
        prev = f"t{i}"
    nodes.append({"op": "concat", "id": "u", "inputs": ["v2", "t2"]})
    nodes.append({"op": "linear", "id": "f0", "input": "u",
                  "weight": "joint.blocks.0.w", "relu": True})
    nodes.append({"op": "linear", "id": "f1", "input": "f0",
                  "weight": "joint.blocks.1.w", "relu": False})
    return nodes


def build():
    model = ToyVLM.initialize(seed=2)
    toolkit = model.to_tensor_map()
    write_container(toolkit, HERE / "toolkit_checkpoint.safetensors")
    (HERE / "toolkit_spec.json").write_text(
        json.dumps(toy_model_spec(model), indent=2, sort_keys=True) + "\n"
    )

    rng = np.random.default_rng(17)
    source = TensorMap(metadata={"origin": "toy reference model"})
    for toolkit_name, source_name in SOURCE_OF.items():
        source.put(source_name, toolkit.get(toolkit_name))
    source.put("visual.scale", np.ones(64, dtype=np.float32))
    source.put("embeddings.table", rng.standard_normal((10, 32)).astype(np.float32))
    write_container(source, HERE / "source_model.safetensors")

    code = main([
        "calibrate",
        "--model-spec", str(HERE / "toolkit_spec.json"),
        "--checkpoint", str(HERE / "toolkit_checkpoint.safetensors"),
        "--batches", str(BATCHES), "--batch-size", str(BATCH_SIZE),
        "--seed", str(SEED),
        "--out", str(HERE / "golden_stats.safetensors"),
        "--dump-inputs", str(HERE / "reference_batches.safetensors"),
    ])
    assert code == 0

    manifest = {
        "source": "source_model.safetensors",
        "rename": RENAME,
        "exclude": ["^embeddings\\."],
        "modalities": ["vision", "text", "fusion"],
        "modality_rules": [
            {"pattern": "^vision\\.", "modality": "vision"},
            {"pattern": "^text\\.", "modality": "text"},
            {"pattern": "^fusion\\.", "modality": "fusion"},
        ],
        "calibration": {
            "dataset": "reference_batches.safetensors",
            "batches": BATCHES,
            "batch_size": BATCH_SIZE,
            "seed": SEED,
        },
        "forward": {
            "inputs": {"vision": "vision_input", "text": "text_input"},
            "nodes": forward_nodes(),
        },
        "outputs": {
            "checkpoint": "out/checkpoint.safetensors",
            "model_spec": "out/model_spec.json",
            "stats": "out/stats.safetensors",
        },
    }
    (HERE / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    print("fixtures written to", HERE)


if __name__ == "__main__":
    build()
