"""Gradient-free information-flow pruning toolkit for multimodal
weight matrices: saliency scoring, modality-aware budgeting, binary
masks, sparse checkpoints and sparsity reports."""

from .budgeting import (
    BudgetPlan,
    budgets_global_magnitude,
    budgets_global_score,
    budgets_multimodal,
    budgets_uniform,
    modality_keep_counts,
)
from .calibration import (
    ActivationStats,
    NormAccumulator,
    finalize,
    read_stats,
    write_stats,
)
from .errors import FormatError, MultiflowError, ValidationError
from .masking import (
    PruneMask,
    SparsityReport,
    apply_mask,
    build_mask,
    propagate_tying,
    read_mask,
    sparsity_report,
    verify_mask,
    write_mask,
)
from .modelspec import (
    LayerSpec,
    PrunableModel,
    load_model_spec,
    partition_by_modality,
    resolve_tying,
)
from .pipeline import compute_scores, make_mask
from .scoring import (
    CRITERIA,
    NodeSaliencies,
    ScoreMatrix,
    node_saliencies,
    score_lamp,
    score_l2norm,
    score_magnitude,
    score_multiflow,
    score_multiflow_bruteforce,
    score_random,
)
from .tensorstore import SelectionResult, TensorMap, read_container, select_topk, write_container

__version__ = "0.1.0"
