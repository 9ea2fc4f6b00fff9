"""Trust-weighted fusion of multimodal, multiview sleep-pose classifiers."""

from .ccls import TrustVector, build_design, build_oracle, solve_trust
from .core import (ALL_SCENES, Channel, DataPoint, Dataset, DatasetConfig, Illumination, Modality,
                   Occlusion, PoseLabel, SceneCondition, View)
from .evaluation import ConfigurationSpec, EvalReport, emit_report, run_cv, run_missing_modality
from .fusion import TrustedModel, adjust_missing, load_model, predict, save_model, train_model
from .synthdata import GeneratorConfig, generate, load_dataset, save_dataset

__version__ = "0.1.0"

__all__ = [
    "ALL_SCENES", "Channel", "ConfigurationSpec", "DataPoint", "Dataset", "DatasetConfig",
    "EvalReport", "GeneratorConfig", "Illumination", "Modality", "Occlusion", "PoseLabel",
    "SceneCondition", "TrustVector", "TrustedModel", "View", "adjust_missing", "build_design",
    "build_oracle", "emit_report", "generate", "load_dataset", "load_model", "predict",
    "run_cv", "run_missing_modality", "save_dataset", "save_model", "solve_trust", "train_model",
]
