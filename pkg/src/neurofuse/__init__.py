"""Hybrid structure-function brain graphs with local-global attention
networks for cognitive score regression."""

from .connectome import (
    TARGET_NAMES,
    ConnectivityMatrix,
    Modality,
    SbmLoadings,
    SparseEdgeSet,
    SubjectRecord,
    knn_sparsify,
    load_cohort,
    save_cohort,
    sbm_subject_matrix,
)
from .diffcore import (
    AdamState,
    ParamStore,
    Tensor2,
    adam_step,
    dropout,
    finite_difference_check,
    glorot_uniform,
    layer_norm,
    load_checkpoint,
    no_grad,
    save_checkpoint,
    softmax,
)
from .errors import ConfigurationError, NumericError, ValidationError
from .hybrid_graph import (
    EdgeKind,
    GraphConfig,
    HybridEdge,
    HybridGraph,
    assemble_hybrid_graph,
    count_detours,
    cross_modal_connections,
    detour_bucket,
    edge_kind_from_label,
    multiscale_detour_connections,
)
from .model import (
    ConnectionImportance,
    EdgeAttribute,
    ForwardTrace,
    GraphTensors,
    ModelConfig,
    extract_attention_importance,
    forward,
    global_self_attention,
    init_params,
    local_edge_attention,
)
from .objectives import (
    LossWeights,
    MetricsEntry,
    MetricsReport,
    evaluate,
    joint_loss,
    sf_consistency_loss,
    task_loss,
)
from .pipeline import (
    RunReport,
    RunResult,
    TrainConfig,
    audit_graphs,
    build_graphs,
    cohort_hash,
    explain,
    kfold_split,
    predict,
    run_cv,
    train_fold,
)
from .synth import SynthConfig, baseline_predictors, generate_cohort, resolve_signal_edges

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
