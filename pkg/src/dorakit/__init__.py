from .ablation import AblationCell, build_ablation_grid, run_ablation
from .checkpoint import FORMAT_VERSION, Checkpoint, load_checkpoint, save_checkpoint
from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    DoraError,
    NumericalError,
    ParseError,
    SchemaError,
    ValidationError,
)
from .evaluation import (
    MetricSet,
    compute_metrics,
    design_matrix,
    format_report,
    historical_average,
    hit_rate,
    linear_regression,
    mae,
    mape,
    metrics_by_group,
)
from .log import LL_DEBUG, LL_ERROR, LL_INFO, LL_NONE, LL_VERBOSE, log_get, log_set
from .losses import (
    PretextLossConfig,
    PretrainLoss,
    cross_entropy,
    mse_loss,
    pretrain_loss,
    supcon_loss,
)
from .model import (
    FeatureSubset,
    ModelConfig,
    ModelParams,
    backward,
    embed,
    encode,
    forward,
    init_params,
    predict_price,
    predict_town,
    pretext_labels,
)
from .nn import (
    AdamWState,
    DenseLayer,
    GradTape,
    LayerGrad,
    Mlp,
    adamw_step,
    mish,
    mish_grad,
    mlp_backward,
    mlp_forward,
    numerical_gradient,
    softmax,
    softplus,
)
from .poi import (
    PoiClass,
    PoiIndex,
    PoiPoint,
    RadiusProfile,
    build_index,
    poi_column_names,
    poi_convert,
    poi_convert_many,
)
from .schema import (
    Batch,
    Dataset,
    FeatureSchema,
    Normalizer,
    PropertyRecord,
    Role,
    apply_normalizer,
    default_schema,
    fit_normalizer,
    fit_target_scaler,
    load_csv,
    read_schema,
    save_csv,
    scan_vocabularies,
    write_schema,
)
from .synthetic import GeneratorTruth, SynthConfig, SyntheticGenerator, generate
from .training import (
    ExperimentData,
    ExperimentReport,
    FinetuneConfig,
    FittedModel,
    Method,
    PretrainConfig,
    SeedResult,
    finetune,
    pretrain,
    run_experiment,
    sample_support_set,
    scratch_checkpoint,
)

__version__ = "0.1.0"

__all__ = [
    # Schema and data
    "Batch",
    "Dataset",
    "FeatureSchema",
    "Normalizer",
    "PropertyRecord",
    "Role",
    "apply_normalizer",
    "default_schema",
    "fit_normalizer",
    "fit_target_scaler",
    "load_csv",
    "read_schema",
    "save_csv",
    "scan_vocabularies",
    "write_schema",
    # PoI features
    "PoiClass",
    "PoiIndex",
    "PoiPoint",
    "RadiusProfile",
    "build_index",
    "poi_column_names",
    "poi_convert",
    "poi_convert_many",
    # Neural core
    "AdamWState",
    "DenseLayer",
    "GradTape",
    "LayerGrad",
    "Mlp",
    "adamw_step",
    "mish",
    "mish_grad",
    "mlp_backward",
    "mlp_forward",
    "numerical_gradient",
    "softmax",
    "softplus",
    # Losses
    "PretextLossConfig",
    "PretrainLoss",
    "cross_entropy",
    "mse_loss",
    "pretrain_loss",
    "supcon_loss",
    # Model and checkpoints
    "FORMAT_VERSION",
    "Checkpoint",
    "FeatureSubset",
    "ModelConfig",
    "ModelParams",
    "backward",
    "embed",
    "encode",
    "forward",
    "init_params",
    "load_checkpoint",
    "predict_price",
    "predict_town",
    "pretext_labels",
    "save_checkpoint",
    # Training and experiments
    "AblationCell",
    "ExperimentData",
    "ExperimentReport",
    "FinetuneConfig",
    "FittedModel",
    "Method",
    "PretrainConfig",
    "SeedResult",
    "build_ablation_grid",
    "finetune",
    "pretrain",
    "run_ablation",
    "run_experiment",
    "sample_support_set",
    "scratch_checkpoint",
    # Evaluation
    "MetricSet",
    "compute_metrics",
    "design_matrix",
    "format_report",
    "historical_average",
    "hit_rate",
    "linear_regression",
    "mae",
    "mape",
    "metrics_by_group",
    # Synthetic data
    "GeneratorTruth",
    "SynthConfig",
    "SyntheticGenerator",
    "generate",
    # Errors
    "CheckpointError",
    "ConfigError",
    "DataError",
    "DoraError",
    "NumericalError",
    "ParseError",
    "SchemaError",
    "ValidationError",
    # Log level constants
    "LL_NONE",
    "LL_ERROR",
    "LL_INFO",
    "LL_DEBUG",
    "LL_VERBOSE",
    "log_get",
    "log_set",
]
