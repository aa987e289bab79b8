"""Declarative experiment configuration.

One TOML document drives every command: corpus generation, feature
extraction, radio fitting, training, ablation and importance. Values
omitted from the file fall back to package defaults; ``--set a.b.c=v``
overrides are parsed as TOML fragments and applied on top. Unknown
keys anywhere are rejected, never ignored.

The resolved document (defaults + file + overrides) is hashed so runs
can state exactly what configuration produced them.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Mapping, Sequence

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .corpus import Grain, SensorKind
from .errors import UsageError
from .features import FeatureConfig
from .pipeline import DEFAULT_ABLATION_GROUPS, ExperimentConfig
from .radio import DEFAULT_BOUNDS, RadioParams, SearchSpace
from .scoring import CostWeights
from .synth import GeneratorSpec, ImuDrift

#: Schema marker: a table whose keys are data, not config structure.
OPEN = "open"

_SCHEMA = {
    "seed": None,
    "output": {"dir": None},
    "synth": {
        "events_per_cell": None,
        "classes": None,
        "grains": None,
        "step_sizes": None,
        "looks_per_event": None,
        "rssi_per_look": None,
        "imu_per_look": None,
        "tx_ref": None,
        "n_exponent": None,
        "shadowing_sigma": None,
        "vocab": OPEN,
        "context_offsets": OPEN,
        "imu_sensors": None,
        "imu_noise": OPEN,
        "drift": {"enabled": None, "sensor": None, "channel": None,
                  "per_meter": None},
        "seed": None,
    },
    "corpus": {
        "train_events": None, "train_key": None,
        "dev_events": None, "dev_key": None,
        "test_events": None, "test_key": None,
    },
    "features": {
        "use_ble_minmeanmax": None,
        "ble_percentiles": None,
        "use_categoricals": None,
        "imu_sensors": OPEN,
        "use_magnitude": None,
        "use_linear_approx_distance": None,
        "use_path_loss": None,
        "use_friis_distance": None,
        "radio_params": {"tx_ref": None, "n_exponent": None, "p_t": None,
                         "g_t": None, "g_r": None, "lambda_m": None,
                         "sys_loss": None},
    },
    "model": {"kind": None, "grid": OPEN, "base": OPEN},
    "weights": {"w_miss": None, "w_fa": None},
    "ablation": {"groups": None},
    "importance": {"repeats": None},
    "radio_fit": {"model": None, "iterations": None, "seed": None,
                  "refine_passes": None, "refine_iters": None,
                  "bounds": OPEN},
}


def default_document() -> dict:
    """The full configuration with every value at its package default."""
    spec = GeneratorSpec()
    cfg = FeatureConfig()
    return {
        "seed": 0,
        "output": {"dir": "out"},
        "synth": {
            "events_per_cell": spec.events_per_cell,
            "classes": list(spec.classes),
            "grains": [g.value for g in spec.grains],
            "step_sizes": list(spec.step_sizes),
            "looks_per_event": spec.looks_per_event,
            "rssi_per_look": spec.rssi_per_look,
            "imu_per_look": spec.imu_per_look,
            "tx_ref": spec.tx_ref,
            "n_exponent": spec.n_exponent,
            "shadowing_sigma": spec.shadowing_sigma,
            "vocab": {f: list(v) for f, v in spec.vocab.items()},
            "context_offsets": {f: dict(v)
                                for f, v in spec.context_offsets.items()},
            "imu_sensors": [k.value for k in spec.imu_sensors],
            "imu_noise": {k.value: v for k, v in spec.imu_noise.items()},
            "drift": {
                "enabled": spec.drift.enabled,
                "sensor": spec.drift.sensor.value,
                "channel": spec.drift.channel,
                "per_meter": spec.drift.per_meter,
            },
        },
        "corpus": {
            "train_events": "corpus/train/events",
            "train_key": "corpus/train/key.tsv",
            "dev_events": "corpus/dev/events",
            "dev_key": "corpus/dev/key.tsv",
            "test_events": "corpus/test/events",
            "test_key": "corpus/test/key.tsv",
        },
        "features": cfg.to_dict(),
        "model": {
            "kind": "extra_trees",
            "grid": {"min_samples_split": [2, 8]},
            "base": {},
        },
        "weights": {"w_miss": 1.0, "w_fa": 1.0},
        "ablation": {"groups": list(DEFAULT_ABLATION_GROUPS)},
        "importance": {"repeats": 10},
        "radio_fit": {
            "model": "linear",
            "iterations": 2000,
            "refine_passes": 4,
            "refine_iters": 80,
            "bounds": {k: list(v) for k, v in DEFAULT_BOUNDS.items()},
        },
    }


def _deep_merge(base: dict, override: Mapping) -> dict:
    out = dict(base)
    for key, val in override.items():
        if isinstance(val, Mapping) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], val)
        else:
            out[key] = val
    return out


def _validate_keys(doc: Mapping, schema: Mapping, path: str = "") -> None:
    for key, val in doc.items():
        full = f"{path}{key}"
        if key not in schema:
            raise UsageError(f"unknown config key {full!r}")
        sub = schema[key]
        if sub == OPEN:
            continue
        if isinstance(sub, dict):
            if not isinstance(val, Mapping):
                raise UsageError(f"config key {full!r} must be a table")
            _validate_keys(val, sub, f"{full}.")
        elif isinstance(val, Mapping):
            raise UsageError(f"config key {full!r} must not be a table")


def apply_override(doc: dict, assignment: str) -> None:
    """Apply one ``dotted.key=value`` override in place.

    The value is parsed as a TOML fragment, so strings need quotes and
    lists use bracket syntax.
    """
    key, sep, raw = assignment.partition("=")
    if not sep or not key.strip():
        raise UsageError(f"override must look like key=value, got {assignment!r}")
    try:
        value = tomllib.loads(f"v = {raw.strip()}")["v"]
    except tomllib.TOMLDecodeError as e:
        raise UsageError(f"cannot parse override value {raw.strip()!r}: {e}")
    parts = key.strip().split(".")
    node = doc
    for part in parts[:-1]:
        nxt = node.get(part)
        if not isinstance(nxt, dict):
            nxt = {}
            node[part] = nxt
        node = nxt
    node[parts[-1]] = value


def load_document(path: Path | str | None,
                  overrides: Sequence[str] = ()) -> dict:
    """Resolve defaults + config file + ``--set`` overrides; validate keys."""
    doc = default_document()
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        try:
            user = tomllib.loads(path.read_text(encoding="utf-8"))
        except tomllib.TOMLDecodeError as e:
            raise UsageError(f"cannot parse {path}: {e}")
        doc = _deep_merge(doc, user)
    for assignment in overrides:
        apply_override(doc, assignment)
    _validate_keys(doc, _SCHEMA)
    return doc


def config_hash(doc: Mapping) -> str:
    """sha256 of the resolved document's canonical JSON form."""
    canon = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def generator_spec(doc: Mapping, seed: int | None = None) -> GeneratorSpec:
    s = doc["synth"]
    drift = s["drift"]
    return GeneratorSpec(
        events_per_cell=int(s["events_per_cell"]),
        classes=tuple(float(c) for c in s["classes"]),
        grains=tuple(Grain(g) for g in s["grains"]),
        step_sizes=tuple(float(v) for v in s["step_sizes"]),
        looks_per_event=int(s["looks_per_event"]),
        rssi_per_look=int(s["rssi_per_look"]),
        imu_per_look=int(s["imu_per_look"]),
        tx_ref=float(s["tx_ref"]),
        n_exponent=float(s["n_exponent"]),
        shadowing_sigma=float(s["shadowing_sigma"]),
        vocab={f: tuple(v) for f, v in s["vocab"].items()},
        context_offsets={f: {lvl: float(db) for lvl, db in shifts.items()}
                         for f, shifts in s["context_offsets"].items()},
        imu_sensors=tuple(_sensor(n) for n in s["imu_sensors"]),
        imu_noise={_sensor(k): float(v) for k, v in s["imu_noise"].items()},
        drift=ImuDrift(
            enabled=bool(drift["enabled"]),
            sensor=_sensor(drift["sensor"]),
            channel=int(drift["channel"]),
            per_meter=float(drift["per_meter"]),
        ),
        seed=_resolve_seed(doc, s, seed),
    )


def _sensor(name: str) -> SensorKind:
    try:
        return SensorKind(name)
    except ValueError:
        raise UsageError(f"unknown sensor name {name!r} in config")


def _resolve_seed(doc: Mapping, section: Mapping, override: int | None) -> int:
    if override is not None:
        return override
    return int(section.get("seed", doc["seed"]))


def feature_config(doc: Mapping) -> FeatureConfig:
    return FeatureConfig.from_dict(doc["features"])


def _clean_hyperparam(name: str, value):
    # TOML has no null; 0 stands for "no cap" on these optional ints
    if name in ("max_depth", "k_features") and value == 0:
        return None
    return value


def _grid(doc: Mapping) -> dict[str, list]:
    out = {}
    for name, values in doc["model"]["grid"].items():
        if not isinstance(values, list):
            values = [values]
        out[name] = [_clean_hyperparam(name, v) for v in values]
    return out


def _base_hyperparams(doc: Mapping) -> dict:
    return {name: _clean_hyperparam(name, v)
            for name, v in doc["model"]["base"].items()}


def cost_weights(doc: Mapping) -> CostWeights:
    w = doc["weights"]
    return CostWeights(w_miss=float(w["w_miss"]), w_fa=float(w["w_fa"]))


def experiment_config(
    doc: Mapping,
    base_dir: Path,
    seed: int | None = None,
    out_dir: Path | str | None = None,
) -> ExperimentConfig:
    """Build the pipeline configuration; corpus paths resolve against
    the config file's directory."""
    c = doc["corpus"]

    def resolve(rel: str) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else base_dir / p

    if out_dir is None:
        out = resolve(doc["output"]["dir"])
    else:
        out = Path(out_dir)
    return ExperimentConfig(
        train_events=resolve(c["train_events"]),
        train_key=resolve(c["train_key"]),
        dev_events=resolve(c["dev_events"]),
        dev_key=resolve(c["dev_key"]),
        test_events=resolve(c["test_events"]),
        test_key=resolve(c["test_key"]),
        features=feature_config(doc),
        model_kind=str(doc["model"]["kind"]),
        grid=_grid(doc),
        base_hyperparams=_base_hyperparams(doc),
        weights=cost_weights(doc),
        seed=seed if seed is not None else int(doc["seed"]),
        ablation_groups=tuple(doc["ablation"]["groups"]),
        out_dir=out,
    )


def radio_fit_settings(
    doc: Mapping, seed: int | None = None
) -> tuple[str, SearchSpace, RadioParams]:
    rf = doc["radio_fit"]
    model = str(rf["model"])
    if model not in ("linear", "friis"):
        raise UsageError(f"radio_fit.model must be 'linear' or 'friis', "
                         f"got {model!r}")
    bounds = {name: (float(lo), float(hi))
              for name, (lo, hi) in rf["bounds"].items()}
    space = SearchSpace(
        bounds=bounds,
        iterations=int(rf["iterations"]),
        seed=_resolve_seed(doc, rf, seed),
        refine_passes=int(rf["refine_passes"]),
        refine_iters=int(rf["refine_iters"]),
    )
    base = RadioParams(**doc["features"]["radio_params"])
    return model, space, base


def _toml_scalar(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, float):
        return repr(float(value))
    if isinstance(value, int):
        return str(value)
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_toml_scalar(v) for v in value) + "]"
    raise UsageError(f"cannot serialize {type(value).__name__} to TOML")


def dumps_toml(doc: Mapping, _prefix: str = "") -> str:
    """Serialize a nested dict of plain values as TOML.

    Covers only what this package writes (bare keys, scalar and array
    values, nested tables); not a general emitter.
    """
    scalars = []
    tables = []
    for key, value in doc.items():
        if isinstance(value, Mapping):
            name = f"{_prefix}{key}"
            tables.append(f"[{name}]\n" + dumps_toml(value, f"{name}."))
        else:
            scalars.append(f"{key} = {_toml_scalar(value)}\n")
    parts = ["".join(scalars)] if scalars else []
    parts.extend(tables)
    return "\n".join(parts)
