from .model import ToyVLM, toy_model_spec
from .data import SyntheticPairSet
from .train import TrainResult, TrainingDiverged, retrieval_accuracy, train
from .gradscore import itersnip_mask, snip_mask, snip_scores
from .experiment import METHOD_NAMES, run_experiment

__all__ = [
    "ToyVLM",
    "toy_model_spec",
    "SyntheticPairSet",
    "TrainResult",
    "TrainingDiverged",
    "retrieval_accuracy",
    "train",
    "snip_scores",
    "snip_mask",
    "itersnip_mask",
    "METHOD_NAMES",
    "run_experiment",
]
