"""Export domain models."""
from .clip import Label, LabeledClip, Manifest, Split
from .config import (
    ConfigError,
    DatasetConfig,
    EvalConfig,
    PathsConfig,
    PipelineConfig,
    PreprocessConfig,
    RankPoolConfig,
    TrainConfig,
)
from .frame import CropRect, Frame, ImageFormat
from .pooling import DynamicImage, FeatureSeq
from .report import (
    ClassMetrics,
    ConfusionMatrix,
    CrossValSummary,
    EvalReport,
    FoldResult,
    RocPoint,
)
from .training import AdamState, EpochRecord, ImageSet, ModelParams, TrainTrace

__all__ = [
    "Frame",
    "CropRect",
    "ImageFormat",
    "FeatureSeq",
    "DynamicImage",
    "Label",
    "Split",
    "LabeledClip",
    "Manifest",
    "ModelParams",
    "AdamState",
    "EpochRecord",
    "ImageSet",
    "TrainTrace",
    "ConfusionMatrix",
    "RocPoint",
    "ClassMetrics",
    "EvalReport",
    "FoldResult",
    "CrossValSummary",
    "ConfigError",
    "PreprocessConfig",
    "RankPoolConfig",
    "DatasetConfig",
    "TrainConfig",
    "EvalConfig",
    "PathsConfig",
    "PipelineConfig",
]
