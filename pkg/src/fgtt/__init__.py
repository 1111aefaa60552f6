"""Feature-group tabular transformer for three-way crash-type classification.

Pure numpy: a small reverse-mode autodiff engine, the transformer and its
training loop, tree-ensemble baselines, Gaussian-process hyperparameter
search and a synthetic data generator with a known label mechanism.
"""

__version__ = "0.1.0"

from .data import Dataset, EncodedMatrix, SplitIndices, encode, fit_stats, impute_default, impute_group_mean, \
    load_dataset, stratified_kfold, stratified_split
from .metrics import Metrics, compute_metrics
from .model import FGTTConfig, FGTTModel, aggregate_attention, partition_columns
from .schema import CLASSES, GROUPS, FeatureSchema, default_schema
from .synthetic import GeneratorConfig, generate, generate_with_truth
from .training import FocalLossParams, TrainConfig, focal_loss, train

__all__ = [
    "CLASSES", "GROUPS", "Dataset", "EncodedMatrix", "FGTTConfig", "FGTTModel", "FeatureSchema",
    "FocalLossParams", "GeneratorConfig", "Metrics", "SplitIndices", "TrainConfig", "aggregate_attention",
    "compute_metrics", "default_schema", "encode", "fit_stats", "focal_loss", "generate", "generate_with_truth",
    "impute_default", "impute_group_mean", "load_dataset", "partition_columns", "stratified_kfold",
    "stratified_split", "train",
]
