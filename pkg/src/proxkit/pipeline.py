"""End-to-end experiment protocol: dual-grain training, ablation, importance.

The protocol trains one model per grain. Category vocabularies are
fitted on the training split only; each grain's hyperparameters are
grid-searched on train against dev, the winner is refitted on train
plus dev, and the two models' test predictions are concatenated into a
single table scored over the four standard conditions.

Ablation re-runs the whole protocol with a feature group removed (same
seed, same grids), so deltas measure what retraining without the group
costs. Permutation importance shuffles one feature column at a time in
the evaluation set and reports the mean metric increase.
"""

from __future__ import annotations

import gzip
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .corpus import Event, Grain, KeyTable, SensorKind, load_events, load_key
from .ensemble import (
    TreeEnsembleModel,
    fit_extra_trees,
    fit_gbm,
    grid_search,
    make_hyperparams,
    model_from_dict,
    model_to_dict,
    predict,
)
from .errors import DataError, ProxkitError, UsageError
from .features import CategoryVocabulary, FeatureConfig, build_matrix, schema_for
from .scoring import (
    STANDARD_CONDITIONS,
    CostWeights,
    NdcfReport,
    evaluate,
    miss_fa,
    ndcf,
    write_predictions,
)


class PipelineError(ProxkitError):
    """Base class for protocol-level failures."""


class EmptyGrainError(PipelineError, DataError):
    """A split has no events of a required grain."""


class UnknownGroupError(PipelineError, UsageError):
    """An ablation group name is not recognized."""


class EmptyAblationError(PipelineError, UsageError):
    """run_ablation was invoked with no groups configured."""


#: Feature groups available to ablation: RSSI-derived families, the
#: radio scalars alone, the categorical encodings, and each IMU sensor.
_SENSOR_GROUPS = {kind.value.lower(): kind for kind in SensorKind
                  if kind is not SensorKind.BLUETOOTH}

DEFAULT_ABLATION_GROUPS = (
    "bluetooth", "radio", "categorical",
    "accelerometer", "gyroscope", "magnetometer", "altitude",
)


def ablated_config(cfg: FeatureConfig, group: str) -> FeatureConfig:
    """Feature configuration with one named group switched off.

    "bluetooth" removes everything computed from RSSI (summaries,
    percentiles and the radio scalars); "radio" removes only the radio
    scalars; "categorical" the context encodings; a sensor name removes
    that sensor's summary family.
    """
    if group == "bluetooth":
        return replace(cfg, use_ble_minmeanmax=False, ble_percentiles=(),
                       use_linear_approx_distance=False, use_path_loss=False,
                       use_friis_distance=False)
    if group == "radio":
        return replace(cfg, use_linear_approx_distance=False,
                       use_path_loss=False, use_friis_distance=False)
    if group == "categorical":
        return replace(cfg, use_categoricals=False)
    kind = _SENSOR_GROUPS.get(group)
    if kind is None:
        raise UnknownGroupError(
            f"unknown ablation group {group!r}; expected 'bluetooth', "
            f"'radio', 'categorical' or a sensor name")
    imu = {k: v for k, v in cfg.imu_sensors.items() if k is not kind}
    return replace(cfg, imu_sensors=imu)


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one protocol run depends on.

    ``grid`` maps hyperparameter names to candidate value lists and is
    shared by both grains; ``base_hyperparams`` are fixed values merged
    under every grid point.
    """

    train_events: Path
    train_key: Path
    dev_events: Path
    dev_key: Path
    test_events: Path
    test_key: Path
    features: FeatureConfig = field(default_factory=FeatureConfig)
    model_kind: str = "extra_trees"
    grid: Mapping[str, Sequence] = field(
        default_factory=lambda: {"min_samples_split": (2, 8)})
    base_hyperparams: Mapping = field(default_factory=dict)
    weights: CostWeights = field(default_factory=CostWeights)
    seed: int = 0
    ablation_groups: tuple[str, ...] = DEFAULT_ABLATION_GROUPS
    out_dir: Path | None = None

    def __post_init__(self):
        if len(set(self.ablation_groups)) != len(self.ablation_groups):
            raise UsageError("ablation group names must be unique")


@dataclass
class ExperimentResult:
    report: NdcfReport
    predictions: dict[str, float]
    selected: dict[str, dict]
    grid_tables: dict[str, list[dict]]
    models: dict[str, TreeEnsembleModel]
    vocab: CategoryVocabulary
    features: FeatureConfig
    schema: tuple[str, ...]


@dataclass(frozen=True)
class AblationResult:
    baseline_score: float
    baseline_report: NdcfReport
    groups: tuple[str, ...]
    scores: Mapping[str, float]
    deltas: Mapping[str, float]


Splits = Mapping[str, tuple[list[Event], KeyTable]]


def load_splits(cfg: ExperimentConfig) -> dict[str, tuple[list[Event], KeyTable]]:
    return {
        "train": (load_events(cfg.train_events), load_key(cfg.train_key)),
        "dev": (load_events(cfg.dev_events), load_key(cfg.dev_key)),
        "test": (load_events(cfg.test_events), load_key(cfg.test_key)),
    }


def grain_metric(grain: Grain, weights: CostWeights) -> Callable:
    """Cost used for model selection of one grain's model.

    The mean nDCF over the grain's standard conditions (three
    thresholds for fine, one for coarse).
    """
    thresholds = [c.threshold_d for c in STANDARD_CONDITIONS
                  if c.grain is grain]

    def metric(y_true, y_pred) -> float:
        scores = []
        for t in thresholds:
            p_miss, p_fa, _ = miss_fa(y_pred, y_true, t)
            scores.append(ndcf(p_miss, p_fa, weights))
        return sum(scores) / len(scores)

    return metric


def _grain_subset(events: list[Event], keys: KeyTable,
                  grain: Grain) -> tuple[list[Event], list[float]]:
    subset = [ev for ev in events if keys[ev.id].grain is grain]
    labels = [keys[ev.id].distance for ev in subset]
    return subset, labels


def _fit_kind(kind: str, X, y, hp, schema):
    if kind == "gbm":
        return fit_gbm(X, y, hp, schema=schema)
    return fit_extra_trees(X, y, hp, schema=schema)


def run_protocol(
    splits: Splits,
    features: FeatureConfig,
    *,
    model_kind: str = "extra_trees",
    grid: Mapping[str, Sequence],
    base_hyperparams: Mapping | None = None,
    weights: CostWeights = CostWeights(),
    seed: int = 0,
) -> ExperimentResult:
    """Run the dual-grain protocol on already-loaded corpora."""
    train_events, train_keys = splits["train"]
    dev_events, dev_keys = splits["dev"]
    test_events, test_keys = splits["test"]

    vocab = CategoryVocabulary.fit(ev.context for ev in train_events)
    schema = schema_for(features, vocab)
    base = dict(base_hyperparams) if base_hyperparams else {}

    predictions: dict[str, float] = {}
    selected: dict[str, dict] = {}
    grid_tables: dict[str, list[dict]] = {}
    models: dict[str, TreeEnsembleModel] = {}
    for grain in (Grain.FINE, Grain.COARSE):
        tr_ev, tr_y = _grain_subset(train_events, train_keys, grain)
        dv_ev, dv_y = _grain_subset(dev_events, dev_keys, grain)
        te_ev, te_y = _grain_subset(test_events, test_keys, grain)
        for split_name, evs in (("train", tr_ev), ("dev", dv_ev),
                                ("test", te_ev)):
            if not evs:
                raise EmptyGrainError(
                    f"{split_name} split has no {grain.value}-grain events")

        X_tr, _ = build_matrix(tr_ev, features, vocab)
        X_dv, _ = build_matrix(dv_ev, features, vocab)
        X_te, _ = build_matrix(te_ev, features, vocab)

        metric = grain_metric(grain, weights)
        best, table = grid_search(
            grid, (X_tr, tr_y), (X_dv, dv_y), metric,
            kind=model_kind, base=base, seed=seed)

        hp_args = {**base, **best}
        hp_args.setdefault("seed", seed)
        hp = make_hyperparams(model_kind, hp_args)
        X_fit = np.vstack([X_tr, X_dv])
        model = _fit_kind(model_kind, X_fit, tr_y + dv_y, hp, schema)

        pred = predict(model, X_te)
        predictions.update((ev.id, float(d)) for ev, d in zip(te_ev, pred))
        selected[grain.value] = best
        grid_tables[grain.value] = table
        models[grain.value] = model

    report = evaluate(predictions, test_keys, weights)
    return ExperimentResult(
        report=report, predictions=predictions, selected=selected,
        grid_tables=grid_tables, models=models, vocab=vocab,
        features=features, schema=schema)


def run_experiment(cfg: ExperimentConfig,
                   run_info: Mapping | None = None) -> ExperimentResult:
    """Load the configured corpora, run the protocol, persist artifacts."""
    splits = load_splits(cfg)
    result = run_protocol(
        splits, cfg.features, model_kind=cfg.model_kind, grid=cfg.grid,
        base_hyperparams=cfg.base_hyperparams, weights=cfg.weights,
        seed=cfg.seed)
    if cfg.out_dir is not None:
        write_artifacts(result, cfg.out_dir,
                        run_info if run_info is not None else {"seed": cfg.seed})
    return result


def run_ablation(cfg: ExperimentConfig, jobs: int = 1) -> AblationResult:
    """Re-run the protocol once per removed feature group."""
    if not cfg.ablation_groups:
        raise EmptyAblationError("no ablation groups configured")
    # validate every group name before spending time on any run
    configs = {g: ablated_config(cfg.features, g) for g in cfg.ablation_groups}

    splits = load_splits(cfg)

    def run_one(features: FeatureConfig) -> float:
        res = run_protocol(
            splits, features, model_kind=cfg.model_kind, grid=cfg.grid,
            base_hyperparams=cfg.base_hyperparams, weights=cfg.weights,
            seed=cfg.seed)
        return res.report.average_ndcf

    baseline = run_protocol(
        splits, cfg.features, model_kind=cfg.model_kind, grid=cfg.grid,
        base_hyperparams=cfg.base_hyperparams, weights=cfg.weights,
        seed=cfg.seed)
    group_list = list(cfg.ablation_groups)
    if jobs > 1 and len(group_list) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            scores_list = list(ex.map(run_one,
                                      (configs[g] for g in group_list)))
    else:
        scores_list = [run_one(configs[g]) for g in group_list]
    scores = dict(zip(group_list, scores_list))
    base_score = baseline.report.average_ndcf
    deltas = {g: scores[g] - base_score for g in group_list}
    return AblationResult(
        baseline_score=base_score, baseline_report=baseline.report,
        groups=cfg.ablation_groups, scores=scores, deltas=deltas)


def permutation_importance(
    model: TreeEnsembleModel,
    X: np.ndarray,
    y: Sequence[float],
    metric: Callable,
    repeats: int = 10,
    seed: int = 0,
) -> dict[str, float]:
    """Mean metric increase when one feature column is shuffled.

    Each (repeat, feature) pair draws its permutation from its own
    stream ``default_rng((seed, repeat, feature))``, so results do not
    depend on evaluation order. Constant columns get importance 0
    exactly because every permutation leaves them unchanged.
    """
    if repeats < 1:
        raise UsageError("repeats must be >= 1")
    X = np.array(X, dtype=np.float64)
    baseline = metric(y, predict(model, X))
    names = (list(model.schema) if model.schema is not None
             else [f"f{i}" for i in range(X.shape[1])])

    importances: dict[str, float] = {}
    for f, name in enumerate(names):
        original = X[:, f].copy()
        total = 0.0
        for r in range(repeats):
            rng = np.random.default_rng((seed, r, f))
            X[:, f] = original[rng.permutation(X.shape[0])]
            total += metric(y, predict(model, X)) - baseline
        X[:, f] = original
        importances[name] = total / repeats
    return importances


def run_importance(
    cfg: ExperimentConfig, repeats: int = 10
) -> tuple[ExperimentResult, dict[str, dict[str, float]]]:
    """Run the protocol, then score test-set permutation importance per grain."""
    splits = load_splits(cfg)
    result = run_protocol(
        splits, cfg.features, model_kind=cfg.model_kind, grid=cfg.grid,
        base_hyperparams=cfg.base_hyperparams, weights=cfg.weights,
        seed=cfg.seed)
    test_events, test_keys = splits["test"]
    per_grain: dict[str, dict[str, float]] = {}
    for grain in (Grain.FINE, Grain.COARSE):
        te_ev, te_y = _grain_subset(test_events, test_keys, grain)
        X_te, _ = build_matrix(te_ev, result.features, result.vocab)
        metric = grain_metric(grain, cfg.weights)
        per_grain[grain.value] = permutation_importance(
            result.models[grain.value], X_te, te_y, metric,
            repeats=repeats, seed=cfg.seed)
    return result, per_grain


def report_document(result: ExperimentResult,
                    run_info: Mapping | None = None) -> dict:
    """The machine-readable report: scores plus the selected models."""
    doc = result.report.to_dict()
    doc["selected"] = result.selected
    doc["grid_tables"] = result.grid_tables
    if run_info:
        doc["run"] = dict(run_info)
    return doc


def format_run_log(result: ExperimentResult,
                   run_info: Mapping | None = None) -> str:
    """Plain-text run log; deliberately free of timestamps so reruns match."""
    lines = []
    for k, v in (run_info or {}).items():
        lines.append(f"{k}: {v}")
    lines.append(f"schema_size: {len(result.schema)}")
    for grain, params in result.selected.items():
        lines.append(f"selected_{grain}: "
                     f"{json.dumps(params, sort_keys=True)}")
    for cond in result.report.conditions:
        lines.append(f"ndcf_{cond.condition.label}: {cond.ndcf!r}")
    lines.append(f"average_ndcf: {result.report.average_ndcf!r}")
    return "\n".join(lines) + "\n"


def save_model_bundle(path: Path | str, result: ExperimentResult) -> None:
    """Persist both grain models plus vocabulary and feature config.

    gzip with a zeroed timestamp, so identical runs write identical
    bytes.
    """
    doc = {
        "format_version": 1,
        "vocab": result.vocab.to_dict(),
        "features": result.features.to_dict(),
        "schema": list(result.schema),
        "models": {g: model_to_dict(m) for g, m in result.models.items()},
    }
    payload = json.dumps(doc, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        with gzip.GzipFile(fileobj=fh, mode="wb", mtime=0) as gz:
            gz.write(payload)


@dataclass
class ModelBundle:
    vocab: CategoryVocabulary
    features: FeatureConfig
    schema: tuple[str, ...]
    models: dict[str, TreeEnsembleModel]


def load_model_bundle(path: Path | str) -> ModelBundle:
    with gzip.open(path, "rb") as gz:
        doc = json.loads(gz.read().decode("utf-8"))
    version = doc.get("format_version")
    if version != 1:
        raise DataError(f"unsupported model bundle version {version!r}")
    return ModelBundle(
        vocab=CategoryVocabulary.from_dict(doc["vocab"]),
        features=FeatureConfig.from_dict(doc["features"]),
        schema=tuple(doc["schema"]),
        models={g: model_from_dict(d) for g, d in doc["models"].items()},
    )


def predict_events(bundle: ModelBundle, events: list[Event],
                   keys: KeyTable) -> dict[str, float]:
    """Predict distances for labeled-grain events with a saved bundle.

    The key table supplies each event's grain (not its distance), which
    selects the model to apply.
    """
    predictions: dict[str, float] = {}
    for grain in (Grain.FINE, Grain.COARSE):
        subset = [ev for ev in events if keys[ev.id].grain is grain]
        if not subset:
            continue
        X, _ = build_matrix(subset, bundle.features, bundle.vocab)
        pred = predict(bundle.models[grain.value], X)
        predictions.update((ev.id, float(d)) for ev, d in zip(subset, pred))
    return predictions


def write_artifacts(result: ExperimentResult, out_dir: Path | str,
                    run_info: Mapping | None = None) -> None:
    """Write predictions.tsv, report.json, model.bin and run.log."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "predictions.tsv").write_text(
        write_predictions(result.predictions), encoding="utf-8")
    (out_dir / "report.json").write_text(
        json.dumps(report_document(result, run_info), indent=2,
                   sort_keys=True) + "\n",
        encoding="utf-8")
    (out_dir / "run.log").write_text(format_run_log(result, run_info),
                                     encoding="utf-8")
    save_model_bundle(out_dir / "model.bin", result)


def ablation_to_csv(result: AblationResult) -> str:
    lines = ["group,average_ndcf,delta"]
    lines.append(f"baseline,{result.baseline_score!r},0.0")
    for g in result.groups:
        lines.append(f"{g},{result.scores[g]!r},{result.deltas[g]!r}")
    return "\n".join(lines) + "\n"


def importance_to_csv(per_grain: Mapping[str, Mapping[str, float]]) -> str:
    lines = ["grain,feature,importance"]
    for grain in sorted(per_grain):
        ranked = sorted(per_grain[grain].items(),
                        key=lambda kv: (-kv[1], kv[0]))
        for name, imp in ranked:
            lines.append(f"{grain},{name},{imp!r}")
    return "\n".join(lines) + "\n"
