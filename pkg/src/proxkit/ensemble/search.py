"""Exhaustive hyperparameter grid search scored on a held-out dev split."""

from __future__ import annotations

import itertools
from typing import Callable, Mapping, Sequence

import numpy as np

from ..errors import UsageError
from .models import (
    EnsembleError,
    ExtraTreesHyperparams,
    GbmHyperparams,
    fit_extra_trees,
    fit_gbm,
    predict,
)


class EmptyGridError(EnsembleError, UsageError):
    """The grid has no parameters or a parameter has no values."""


def make_hyperparams(kind: str, params: Mapping):
    """Build the hyperparameter set for a model kind from a plain dict."""
    if kind == "extra_trees":
        return ExtraTreesHyperparams(**params)
    if kind == "gbm":
        return GbmHyperparams(**params)
    raise EnsembleError(f"unknown model kind {kind!r}")


def grid_search(
    grid: Mapping[str, Sequence],
    train: tuple[np.ndarray, Sequence[float]],
    dev: tuple[np.ndarray, Sequence[float]],
    metric: Callable[[Sequence[float], Sequence[float]], float],
    *,
    kind: str = "extra_trees",
    base: Mapping | None = None,
    seed: int = 0,
) -> tuple[dict, list[dict]]:
    """Fit every grid point on train, score its dev predictions, keep the best.

    ``metric(y_true, y_pred)`` is a cost (lower is better). Parameter
    names are iterated in sorted order and values in the given order;
    the winner is the first point reaching the minimum, so ties resolve
    to the lexicographically earliest combination. Returns the winning
    parameter dict and the full score table, one row per grid point
    with a ``"score"`` entry added.
    """
    if not grid:
        raise EmptyGridError("hyperparameter grid has no parameters")
    names = sorted(grid)
    for name in names:
        if len(grid[name]) == 0:
            raise EmptyGridError(f"grid parameter {name!r} has no values")

    X_train, y_train = train
    X_dev, y_dev = dev
    base = dict(base) if base else {}

    best_params: dict | None = None
    best_score = np.inf
    table: list[dict] = []
    for combo in itertools.product(*(grid[name] for name in names)):
        params = dict(zip(names, combo))
        hp_args = {**base, **params}
        hp_args.setdefault("seed", seed)
        hp = make_hyperparams(kind, hp_args)
        model = fit_extra_trees(X_train, y_train, hp) if kind == "extra_trees" \
            else fit_gbm(X_train, y_train, hp)
        score = float(metric(y_dev, predict(model, X_dev)))
        table.append({**params, "score": score})
        if score < best_score:  # strict: first minimum wins
            best_score = score
            best_params = params
    assert best_params is not None
    return best_params, table
