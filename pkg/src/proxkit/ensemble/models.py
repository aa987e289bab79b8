"""Tree-ensemble classifiers: extremely randomized trees and gradient boosting.

Both share :class:`TreeEnsembleModel` as the fitted artifact so the
experiment pipeline, serialization and prediction code paths are
identical. Class labels are the distance values themselves; argmax
ties resolve to the lowest class.

Determinism contract: each tree draws from its own counter-based
stream ``np.random.default_rng((seed, tree_index))``, so a fixed seed
reproduces the forest bit for bit regardless of fitting order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ProxkitError, UsageError
from .trees import FlatTree, grow_classification_tree, grow_regression_tree


class EnsembleError(ProxkitError):
    """Base class for ensemble fitting and prediction errors."""


class EmptySetError(EnsembleError):
    """Gini or a fit was requested on an empty sample."""


class ShapeMismatchError(EnsembleError):
    """Feature matrix and label vector disagree, or the matrix is empty."""


class NonFiniteFeatureError(EnsembleError):
    """Feature matrix contains NaN or infinity."""


class SchemaMismatchError(EnsembleError):
    """Prediction-time feature schema differs from the fit-time schema."""


class BadHyperparamError(EnsembleError, UsageError):
    """A hyperparameter is outside its valid range."""


def gini(labels) -> float:
    """Gini impurity 1 - sum(p_c^2) of a label sequence."""
    arr = np.asarray(labels)
    if arr.size == 0:
        raise EmptySetError("gini of an empty label set is undefined")
    _, counts = np.unique(arr, return_counts=True)
    freq = counts / arr.size
    return float(1.0 - np.dot(freq, freq))


@dataclass(frozen=True)
class ExtraTreesHyperparams:
    """Settings for the randomized-forest fitter.

    ``k_features=None`` means ceil(sqrt(n_features)), resolved at fit
    time. ``bootstrap=True`` switches from the default full-sample fit
    to per-tree resampling with replacement. ``split_mode`` is
    "uniform" for production or "midpoint" for the deterministic
    exhaustive-candidate mode used by equivalence tests.
    """

    n_trees: int = 400
    k_features: int | None = None
    min_samples_split: int = 2
    max_depth: int | None = None
    seed: int = 0
    bootstrap: bool = False
    split_mode: str = "uniform"

    def __post_init__(self):
        if self.n_trees < 1:
            raise BadHyperparamError("n_trees must be >= 1")
        if self.k_features is not None and self.k_features < 1:
            raise BadHyperparamError("k_features must be >= 1")
        if self.min_samples_split < 2:
            raise BadHyperparamError("min_samples_split must be >= 2")
        if self.max_depth is not None and self.max_depth < 1:
            raise BadHyperparamError("max_depth must be >= 1")
        if self.split_mode not in ("uniform", "midpoint"):
            raise BadHyperparamError(
                f"split_mode must be 'uniform' or 'midpoint', "
                f"got {self.split_mode!r}")


@dataclass(frozen=True)
class GbmHyperparams:
    """Settings for the multiclass gradient-boosting fitter."""

    n_rounds: int = 300
    learning_rate: float = 0.1
    max_depth: int = 3
    min_samples_leaf: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.n_rounds < 0:
            raise BadHyperparamError("n_rounds must be >= 0")
        if not 0.0 < self.learning_rate <= 1.0:
            raise BadHyperparamError("learning_rate must be in (0, 1]")
        if self.max_depth < 1:
            raise BadHyperparamError("max_depth must be >= 1")
        if self.min_samples_leaf < 1:
            raise BadHyperparamError("min_samples_leaf must be >= 1")


@dataclass
class TreeEnsembleModel:
    """A fitted forest or boosted ensemble.

    ``trees`` is flat for kind "extra_trees" and one list per class
    (outer index = class) for kind "gbm". ``init`` holds the gbm
    log-prior starting scores; ``train_log_loss`` its per-round
    training loss history (element 0 is the loss of the prior alone).
    """

    kind: str
    classes: tuple[float, ...]
    schema: tuple[str, ...] | None
    trees: list = field(default_factory=list)
    init: np.ndarray | None = None
    learning_rate: float | None = None
    hyperparams: dict | None = None
    train_log_loss: list[float] | None = None


def _check_matrix(X: np.ndarray, y=None) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0 or X.shape[1] == 0:
        raise ShapeMismatchError(
            f"feature matrix must be 2-D and non-empty, got shape {X.shape}")
    if not np.isfinite(X).all():
        raise NonFiniteFeatureError("feature matrix contains NaN or inf")
    if y is not None and len(y) != X.shape[0]:
        raise ShapeMismatchError(
            f"{X.shape[0]} feature rows but {len(y)} labels")
    return X


def _encode_labels(y) -> tuple[np.ndarray, np.ndarray, tuple[float, ...]]:
    y = np.asarray(y, dtype=np.float64)
    classes, y_int = np.unique(y, return_inverse=True)
    onehot = np.zeros((y.size, classes.size), dtype=np.float64)
    onehot[np.arange(y.size), y_int] = 1.0
    return y_int.astype(np.intp), onehot, tuple(float(c) for c in classes)


def fit_extra_trees(
    X: np.ndarray,
    y,
    hp: ExtraTreesHyperparams = ExtraTreesHyperparams(),
    schema: tuple[str, ...] | None = None,
) -> TreeEnsembleModel:
    """Fit a forest of extremely randomized trees.

    Every tree sees the full training sample (no bagging) unless
    ``hp.bootstrap`` is set.
    """
    X = _check_matrix(X, y)
    y_int, onehot, classes = _encode_labels(y)
    p = X.shape[1]
    if hp.k_features is None:
        k = math.isqrt(p)
        if k * k < p:
            k += 1
    else:
        k = hp.k_features
        if k > p:
            raise BadHyperparamError(
                f"k_features={k} exceeds the {p} available features")
    midpoint = hp.split_mode == "midpoint"

    trees = []
    for t in range(hp.n_trees):
        rng = np.random.default_rng((hp.seed, t))
        if hp.bootstrap:
            rows = rng.choice(X.shape[0], size=X.shape[0], replace=True)
            Xt, yt_int, yt_onehot = X[rows], y_int[rows], onehot[rows]
        else:
            Xt, yt_int, yt_onehot = X, y_int, onehot
        trees.append(grow_classification_tree(
            Xt, yt_int, yt_onehot, rng, k,
            hp.min_samples_split, hp.max_depth, midpoint=midpoint))
    return TreeEnsembleModel(
        kind="extra_trees", classes=classes, schema=schema, trees=trees,
        hyperparams=_hp_dict(hp))


def _log_loss(onehot: np.ndarray, proba: np.ndarray) -> float:
    eps = 1e-15
    return float(-np.mean(np.sum(onehot * np.log(np.clip(proba, eps, 1.0)),
                                 axis=1)))


def _softmax(F: np.ndarray) -> np.ndarray:
    z = F - F.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def fit_gbm(
    X: np.ndarray,
    y,
    hp: GbmHyperparams = GbmHyperparams(),
    schema: tuple[str, ...] | None = None,
) -> TreeEnsembleModel:
    """Fit a multiclass gradient-boosted tree ensemble.

    Scores start at the class log-priors. Each round fits one
    regression tree per class to the softmax residual y_ic - p_ic and
    takes a Newton leaf step sum(residual) / sum(p(1-p)), scaled by the
    learning rate. With ``n_rounds=0`` the model is the prior alone,
    i.e. it predicts the majority class.
    """
    X = _check_matrix(X, y)
    y_int, onehot, classes = _encode_labels(y)
    n, n_classes = onehot.shape
    priors = onehot.mean(axis=0)
    init = np.log(priors)
    F = np.tile(init, (n, 1))
    history = [_log_loss(onehot, _softmax(F))]

    trees: list[list[FlatTree]] = [[] for _ in range(n_classes)]
    for _ in range(hp.n_rounds):
        P = _softmax(F)
        for c in range(n_classes):
            residual = onehot[:, c] - P[:, c]
            hessian = P[:, c] * (1.0 - P[:, c])
            tree = grow_regression_tree(
                X, residual, hessian, hp.max_depth, hp.min_samples_leaf)
            trees[c].append(tree)
            F[:, c] += hp.learning_rate * tree.predict_value(X)
        history.append(_log_loss(onehot, _softmax(F)))

    return TreeEnsembleModel(
        kind="gbm", classes=classes, schema=schema, trees=trees,
        init=init, learning_rate=hp.learning_rate,
        hyperparams=_hp_dict(hp), train_log_loss=history)


def predict_proba(
    model: TreeEnsembleModel,
    X: np.ndarray,
    schema: tuple[str, ...] | None = None,
) -> np.ndarray:
    """Class-probability matrix, columns in ``model.classes`` order."""
    X = _check_matrix(X)
    if schema is not None and model.schema is not None \
            and tuple(schema) != tuple(model.schema):
        raise SchemaMismatchError(
            "prediction feature schema differs from the fit schema")
    if model.schema is not None and X.shape[1] != len(model.schema):
        raise SchemaMismatchError(
            f"model expects {len(model.schema)} features, got {X.shape[1]}")

    n_classes = len(model.classes)
    if model.kind == "extra_trees":
        acc = np.zeros((X.shape[0], n_classes))
        for tree in model.trees:
            acc += tree.leaf_frequencies(X)
        return acc / len(model.trees)
    if model.kind == "gbm":
        F = np.tile(model.init, (X.shape[0], 1))
        for c in range(n_classes):
            for tree in model.trees[c]:
                F[:, c] += model.learning_rate * tree.predict_value(X)
        return _softmax(F)
    raise EnsembleError(f"unknown model kind {model.kind!r}")


def predict(
    model: TreeEnsembleModel,
    X: np.ndarray,
    schema: tuple[str, ...] | None = None,
) -> np.ndarray:
    """Predicted class labels; probability ties go to the lowest class."""
    proba = predict_proba(model, X, schema)
    idx = np.argmax(proba, axis=1)  # first maximum: lowest class wins ties
    return np.asarray(model.classes)[idx]


def _hp_dict(hp) -> dict:
    d = dict(hp.__dict__)
    return d


def _tree_to_dict(tree: FlatTree) -> dict:
    d = {
        "feature": tree.feature.tolist(),
        "threshold": tree.threshold.tolist(),
        "left": tree.left.tolist(),
        "right": tree.right.tolist(),
    }
    if tree.counts is not None:
        d["counts"] = tree.counts.tolist()
    if tree.values is not None:
        d["values"] = tree.values.tolist()
    return d


def _tree_from_dict(d: dict) -> FlatTree:
    return FlatTree(
        feature=np.asarray(d["feature"], dtype=np.int32),
        threshold=np.asarray(d["threshold"], dtype=np.float64),
        left=np.asarray(d["left"], dtype=np.int32),
        right=np.asarray(d["right"], dtype=np.int32),
        counts=(np.asarray(d["counts"], dtype=np.float64)
                if "counts" in d else None),
        values=(np.asarray(d["values"], dtype=np.float64)
                if "values" in d else None),
    )


def model_to_dict(model: TreeEnsembleModel) -> dict:
    """JSON-ready dict; floats survive the round trip exactly."""
    d = {
        "format_version": 1,
        "kind": model.kind,
        "classes": list(model.classes),
        "schema": list(model.schema) if model.schema is not None else None,
        "hyperparams": model.hyperparams,
    }
    if model.kind == "extra_trees":
        d["trees"] = [_tree_to_dict(t) for t in model.trees]
    else:
        d["trees"] = [[_tree_to_dict(t) for t in per_class]
                      for per_class in model.trees]
        d["init"] = model.init.tolist()
        d["learning_rate"] = model.learning_rate
        d["train_log_loss"] = model.train_log_loss
    return d


def model_from_dict(d: dict) -> TreeEnsembleModel:
    version = d.get("format_version")
    if version != 1:
        raise EnsembleError(f"unsupported model format version {version!r}")
    kind = d["kind"]
    if kind == "extra_trees":
        trees = [_tree_from_dict(t) for t in d["trees"]]
        init = None
        lr = None
        history = None
    elif kind == "gbm":
        trees = [[_tree_from_dict(t) for t in per_class]
                 for per_class in d["trees"]]
        init = np.asarray(d["init"], dtype=np.float64)
        lr = d["learning_rate"]
        history = d["train_log_loss"]
    else:
        raise EnsembleError(f"unknown model kind {kind!r}")
    return TreeEnsembleModel(
        kind=kind,
        classes=tuple(float(c) for c in d["classes"]),
        schema=tuple(d["schema"]) if d["schema"] is not None else None,
        trees=trees,
        init=init,
        learning_rate=lr,
        hyperparams=d.get("hyperparams"),
        train_log_loss=history,
    )
