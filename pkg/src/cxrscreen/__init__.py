"""Benchmark harness for multi-label chest radiograph screening.

Covers manifest ingestion with uncertain-label policies, a pretrained
architecture zoo with a shared sigmoid screening head, masked multi-label
training under three adaptation protocols, per-class ROC/AUC evaluation,
score ensembling, randomized-masking saliency, and a resumable experiment
grid with report emission.
"""

from .config import ExperimentConfig, Hyperparameters, load_config, save_config
from .ensembles import (
    EnsembleWeights,
    average_ensemble,
    derive_weights,
    uniform_weights,
    weighted_ensemble,
)
from .evaluation import (
    DEFAULT_INCLUDED_CLASSES,
    REPORT_COLUMNS,
    EvaluationReport,
    RocCurve,
    TableRow,
    auc_pair_oracle,
    average_auc,
    build_report,
    plot_roc_grid,
    render_table,
    report_to_row,
    roc_points,
    write_roc_points,
)
from .labels import (
    CLASS_INDEX,
    CLASS_NAMES,
    NUM_CLASSES,
    ClassDistribution,
    LabelPolicy,
    LabelState,
    ManifestError,
    StudyRecord,
    TargetVector,
    apply_policy,
    class_distribution,
    distribution_table,
    encode_dataset,
    encode_targets,
    parse_manifest,
    serialize_manifest,
)
from .models import (
    REGISTRY,
    AdaptationProtocol,
    ArchitectureId,
    BackboneEntry,
    CheckpointMismatchError,
    ScreeningModel,
    WeightsUnavailableError,
    build_model,
    count_parameters,
    init_head_from,
    load_checkpoint,
    parameter_hash,
    register_backbone,
    restore_model,
    save_checkpoint,
    set_trainable,
    trainable_parameters,
)
from .preprocess import (
    IMAGENET_MEAN,
    IMAGENET_STD,
    INPUT_SIZE,
    AugmentationConfig,
    ImageLoadError,
    ImageTensor,
    NormalizationStats,
    augment,
    bilinear_resize,
    denormalize,
    eval_pipeline,
    load_resize_replicate,
    normalize,
    train_pipeline,
)
from .runner import (
    ResultsStore,
    RunRecord,
    RunStatus,
    best_models,
    emit_reports,
    enumerate_grid,
    eval_truth,
    run_all,
    run_one,
)
from .saliency import (
    AnnotationRegion,
    MaskBatch,
    MaskGridSpec,
    OverlapScores,
    class_score_fn,
    exhaustive_saliency,
    generate_masks,
    load_annotation,
    overlap_score,
    rise_saliency,
    saliency_from_masks,
    save_overlay,
)
from .training import (
    FitResult,
    PredictionMatrix,
    fit,
    make_optimizer,
    masked_bce,
    masked_bce_with_logits,
    predict,
    steps_per_epoch,
    train_step,
)

__version__ = "0.1.0"

__all__ = [
    "AdaptationProtocol",
    "AnnotationRegion",
    "ArchitectureId",
    "AugmentationConfig",
    "BackboneEntry",
    "CLASS_INDEX",
    "CLASS_NAMES",
    "CheckpointMismatchError",
    "ClassDistribution",
    "DEFAULT_INCLUDED_CLASSES",
    "EnsembleWeights",
    "EvaluationReport",
    "ExperimentConfig",
    "FitResult",
    "Hyperparameters",
    "IMAGENET_MEAN",
    "IMAGENET_STD",
    "INPUT_SIZE",
    "ImageLoadError",
    "ImageTensor",
    "LabelPolicy",
    "LabelState",
    "ManifestError",
    "MaskBatch",
    "MaskGridSpec",
    "NUM_CLASSES",
    "NormalizationStats",
    "OverlapScores",
    "PredictionMatrix",
    "REGISTRY",
    "REPORT_COLUMNS",
    "ResultsStore",
    "RocCurve",
    "RunRecord",
    "RunStatus",
    "ScreeningModel",
    "StudyRecord",
    "TableRow",
    "TargetVector",
    "WeightsUnavailableError",
    "apply_policy",
    "auc_pair_oracle",
    "augment",
    "average_auc",
    "average_ensemble",
    "best_models",
    "bilinear_resize",
    "build_model",
    "build_report",
    "class_distribution",
    "class_score_fn",
    "count_parameters",
    "denormalize",
    "derive_weights",
    "distribution_table",
    "emit_reports",
    "encode_dataset",
    "encode_targets",
    "enumerate_grid",
    "eval_pipeline",
    "eval_truth",
    "exhaustive_saliency",
    "fit",
    "generate_masks",
    "init_head_from",
    "load_annotation",
    "load_checkpoint",
    "load_config",
    "load_resize_replicate",
    "make_optimizer",
    "masked_bce",
    "masked_bce_with_logits",
    "normalize",
    "overlap_score",
    "parameter_hash",
    "parse_manifest",
    "plot_roc_grid",
    "predict",
    "register_backbone",
    "render_table",
    "report_to_row",
    "restore_model",
    "rise_saliency",
    "roc_points",
    "run_all",
    "run_one",
    "saliency_from_masks",
    "save_checkpoint",
    "save_config",
    "save_overlay",
    "serialize_manifest",
    "set_trainable",
    "steps_per_epoch",
    "train_pipeline",
    "train_step",
    "trainable_parameters",
    "uniform_weights",
    "weighted_ensemble",
    "write_roc_points",
]
