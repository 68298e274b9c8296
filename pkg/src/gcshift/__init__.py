"""Unsupervised transfer classification under general conditional shift.

A source-trained ReLU network estimates the source class posteriors, target
class proportions are recovered by pseudo-maximum likelihood on unlabeled
target features, and the two are combined into a plug-in Bayes classifier.
"""

from gcshift.data import (
    Dataset,
    ScalingSpec,
    apply_scaling,
    class_proportions,
    fit_scaling,
    load_csv,
    split,
)
from gcshift.network import MlpConfig, MlpParams, SourceModel, grid_search, train_source
from gcshift.proportions import (
    RatioWeights,
    TargetProportionEstimate,
    em_saerens,
    pseudo_log_likelihood,
    ratio_weights,
    solve_pmle,
)
from gcshift.classifier import OracleClassifier, PluginClassifier, excess_risk

__all__ = [
    "Dataset",
    "ScalingSpec",
    "apply_scaling",
    "class_proportions",
    "fit_scaling",
    "load_csv",
    "split",
    "MlpConfig",
    "MlpParams",
    "SourceModel",
    "grid_search",
    "train_source",
    "RatioWeights",
    "TargetProportionEstimate",
    "em_saerens",
    "pseudo_log_likelihood",
    "ratio_weights",
    "solve_pmle",
    "OracleClassifier",
    "PluginClassifier",
    "excess_risk",
]

__version__ = "0.1.0"
