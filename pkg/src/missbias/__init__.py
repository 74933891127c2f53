"""Affine logit calibration against missingness bias in ablation-based explanations."""

from .ablation import AblationPolicy, ImputeKind, apply_ablation, build_pair_dataset, quantize_rate
from .core import CalibratorParams, Parametrization, apply_calibrator, kl_divergence, softmax
from .errors import (
    CalibratorLoadError,
    CapacityError,
    ConfigError,
    ContractError,
    DomainError,
    ExplainerError,
    IngestionError,
    MissBiasError,
    OptimizationDiverged,
    StageError,
    TrainingError,
)
from .explain import ExplainerConfig, exact_shapley, kernelshap_attribute, lime_attribute
from .fit import (
    CalibratorEnsemble,
    FitConfig,
    PairedLogits,
    fit_calibrator,
    fit_ensemble,
    fit_multistart,
    select_calibrator,
)
from .metrics import PredictablePipeline, accuracy_vs_rate, missingness_bias, sensitivity, sufficiency
from .models import LabeledDataset, ModelKind, SyntheticSpec, TrainConfig, gen_synthetic_clusters, train_model

__version__ = "0.1.0"
