"""tabopen core library: scenarios, metrics and shift statistics for
open-environment evaluation of tabular models.

Public API re-exports for convenient imports:
    from core import load_table, enc_generate, roc_auc, otdd, execute, ...
"""

# Errors
from core.errors import (
    TabopenError,
    ConfigError,
    DataError,
    ConvergenceError,
    TrainingError,
    OverlapError,
)

# Data model
from core.models import (
    RUN_TASKS,
    OBJECTIVES,
    Column,
    DatasetSchema,
    SchemaHints,
    Dataset,
    Standardizer,
    FeatureShiftSpec,
    EncRun,
    CddScenario,
    PredictionSet,
    NoveltyConfig,
    EncReport,
    GaussianSummary,
    OtddConfig,
    ShiftConfig,
    DisdeReport,
    ShiftProfile,
    LogRegConfig,
    MlpConfig,
    RunConfig,
    ReportTable,
    ResultRecord,
)

# File I/O & paths
from core.fileio import (
    read_json,
    read_yaml,
    write_json_atomic,
    write_yaml_atomic,
)
from core.workspace import data_root, output_root, resolve_dataset

# Data handling
from core.data import (
    load_table,
    load_split_tables,
    save_table,
    partition_by_split,
    stratified_subsample,
    split_holdout,
    fit_standardizer,
    apply_standardizer,
    fit_imputer,
    impute,
    fill_missing,
    design_matrix,
)

# Scenarios
from core.scenarios import (
    enc_generate,
    decremental_shift,
    incremental_shift,
    align_features,
    cdd_prepare,
    export_scenario,
    replay_manifest,
)

# Metrics
from core.metrics import (
    accuracy,
    balanced_accuracy,
    f1,
    roc_auc,
    aupr,
    rmse,
    performance_gap,
    novelty_score,
    uncertainty_proportion,
    enc_evaluate,
    rank_table,
)

# Shift statistics
from core.shift import (
    gaussian_summary,
    spd_sqrt,
    gaussian_w2,
    fdd,
    label_shift,
    sinkhorn,
    otdd,
    disde,
    shift_profile,
)

# Built-in models
from core.baselines import (
    knn_fit,
    knn_predict_proba,
    logreg_fit,
    logreg_predict_proba,
    mlp_fit,
    mlp_predict_proba,
    mlp_activations,
    per_sample_loss,
    load_predictions,
    load_embeddings,
)

# Reports & runs
from core.report import emit_report, print_tables, rank_report
from core.pipeline import execute, rank_results, run
