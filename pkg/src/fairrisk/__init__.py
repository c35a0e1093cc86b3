"""Risk prediction on sparse clinical features with equality-of-odds
adversarial training, plus the cohort tooling needed to exercise it:
a synthetic longitudinal patient generator, index-time/exclusion/label
rules, sparse feature extraction, fairness metrics and reports, and a
reproducible training/search pipeline.
"""

from .dataset import (
    FunnelCounts,
    LabeledDataset,
    build_cohort,
    prepare_dataset,
    read_dataset,
    write_dataset,
)
from .errors import (
    ContractError,
    FairriskError,
    NumericError,
    SelectionFailedError,
    UndefinedMetricError,
    ValidationError,
)
from .extraction import (
    apply_exclusions,
    assign_groups,
    eligible_index_times,
    label_outcome,
    select_index_time,
    split_cohort,
)
from .features import (
    Vocabulary,
    build_vocabulary,
    extract_features,
)
from .generator import (
    SyntheticCohortConfig,
    generate_synthetic_cohort,
    iter_cohort_with_plan,
    table1_config,
)
from .metrics import (
    ConfusionAtThreshold,
    auc_prc,
    auc_roc,
    brier_score,
    coefficient_of_variation,
    confusion_at,
    emd_1d,
    mean_pairwise_emd,
)
from .neural import (
    AdamState,
    NetworkParams,
    NetworkSpec,
    adam_step,
    backward,
    forward,
    init_params,
    layer_norm_apply,
    load_checkpoint,
    predict_proba,
    save_checkpoint,
    spectral_normalize,
)
from .records import (
    ClinicalEvent,
    IndexedPatient,
    PatientRecord,
    load_code_list,
    read_records,
    write_records,
)
from .report import (
    FairnessReport,
    alignment_score,
    fairness_report,
    report_to_text,
    write_report_files,
)
from .trainer import (
    EpochStats,
    SearchGrid,
    TrainConfig,
    TrainedModel,
    TrialResult,
    random_search,
    sample_batch,
    select_eq_model,
    train_adversarial,
    train_standard,
)

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "ClinicalEvent",
    "ConfusionAtThreshold",
    "ContractError",
    "EpochStats",
    "FairnessReport",
    "FairriskError",
    "FunnelCounts",
    "IndexedPatient",
    "LabeledDataset",
    "NetworkParams",
    "NetworkSpec",
    "NumericError",
    "PatientRecord",
    "SearchGrid",
    "SelectionFailedError",
    "SyntheticCohortConfig",
    "TrainConfig",
    "TrainedModel",
    "TrialResult",
    "UndefinedMetricError",
    "ValidationError",
    "Vocabulary",
    "adam_step",
    "alignment_score",
    "apply_exclusions",
    "assign_groups",
    "auc_prc",
    "auc_roc",
    "backward",
    "brier_score",
    "build_cohort",
    "build_vocabulary",
    "coefficient_of_variation",
    "confusion_at",
    "eligible_index_times",
    "emd_1d",
    "extract_features",
    "fairness_report",
    "forward",
    "generate_synthetic_cohort",
    "init_params",
    "iter_cohort_with_plan",
    "label_outcome",
    "layer_norm_apply",
    "load_checkpoint",
    "load_code_list",
    "mean_pairwise_emd",
    "predict_proba",
    "prepare_dataset",
    "random_search",
    "read_dataset",
    "read_records",
    "report_to_text",
    "sample_batch",
    "save_checkpoint",
    "select_eq_model",
    "select_index_time",
    "spectral_normalize",
    "split_cohort",
    "table1_config",
    "train_adversarial",
    "train_standard",
    "write_dataset",
    "write_records",
    "write_report_files",
]
