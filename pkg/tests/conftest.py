import numpy as np
import pytest

from multiflow.modelspec import load_model_spec
from multiflow.tensorstore import TensorMap


def pytest_runtest_logreport(report):
    # one visible pass/fail line per acceptance criterion
    if report.when == "call" and "test_acceptance" in report.nodeid:
        outcome = "PASS" if report.passed else "FAIL"
        name = report.nodeid.split("::")[-1]
        print(f"\n[ACCEPTANCE] {name}: {outcome}", flush=True)


def make_checkpoint(layer_shapes: dict[str, tuple[int, int]], seed: int = 0) -> TensorMap:
    rng = np.random.default_rng(seed)
    tm = TensorMap()
    for name, shape in layer_shapes.items():
        tm.put(name, rng.standard_normal(shape).astype(np.float32))
    return tm


def make_model(config: dict, checkpoint: TensorMap):
    return load_model_spec(config, checkpoint)


@pytest.fixture
def two_modality_setup():
    """Small two-modality model with distinct random weights."""
    shapes = {
        "vis.a": (4, 3),
        "vis.b": (3, 4),
        "txt.a": (5, 2),
        "txt.b": (2, 5),
    }
    checkpoint = make_checkpoint(shapes, seed=42)
    config = {
        "modalities": ["vision", "text"],
        "layers": [
            {"name": "vis.a", "modality": "vision"},
            {"name": "vis.b", "modality": "vision"},
            {"name": "txt.a", "modality": "text"},
            {"name": "txt.b", "modality": "text"},
        ],
    }
    model = make_model(config, checkpoint)
    return model, checkpoint
