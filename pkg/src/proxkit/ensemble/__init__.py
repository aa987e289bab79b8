"""From-scratch tree ensembles: extremely randomized trees and boosting."""

from .models import (
    BadHyperparamError,
    EmptySetError,
    EnsembleError,
    ExtraTreesHyperparams,
    GbmHyperparams,
    NonFiniteFeatureError,
    SchemaMismatchError,
    ShapeMismatchError,
    TreeEnsembleModel,
    fit_extra_trees,
    fit_gbm,
    gini,
    model_from_dict,
    model_to_dict,
    predict,
    predict_proba,
)
from .search import EmptyGridError, grid_search, make_hyperparams
from .trees import FlatTree, grow_classification_tree, grow_regression_tree

__all__ = [
    "BadHyperparamError",
    "EmptyGridError",
    "EmptySetError",
    "EnsembleError",
    "ExtraTreesHyperparams",
    "FlatTree",
    "GbmHyperparams",
    "NonFiniteFeatureError",
    "SchemaMismatchError",
    "ShapeMismatchError",
    "TreeEnsembleModel",
    "fit_extra_trees",
    "fit_gbm",
    "gini",
    "grid_search",
    "grow_classification_tree",
    "grow_regression_tree",
    "make_hyperparams",
    "model_from_dict",
    "model_to_dict",
    "predict",
    "predict_proba",
]
