"""Event -> fixed-schema feature vector.

Feature families, in schema order:

1. Bluetooth RSSI min/mean/max.
2. Bluetooth RSSI percentiles (linear interpolation).
3. Radio-model scalars computed on the event's mean RSSI: log-linear
   distance, path-loss attenuation, free-space-inverted distance.
4. Per-sensor IMU summaries: per-channel min/mean/max, the same for the
   Euclidean magnitude series (3-channel sensors), plus a presence flag.
   A sensor absent from an event contributes zeros and presence 0.
5. Device-context categoricals, encoded with orthonormal polynomial
   contrasts over lexicographically ordered levels. A level unseen at
   fit time maps to the all-zeros row.

The schema depends only on the configuration and the fitted vocabulary,
never on an individual event, so every event in a corpus gets an
identically shaped vector.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import radio
from .corpus import DeviceContext, Event, SensorKind
from .errors import DataError

logger = logging.getLogger(__name__)

DEFAULT_PERCENTILES = (10.0, 25.0, 50.0, 75.0, 90.0)

DEFAULT_IMU_SENSORS = (
    SensorKind.ACCELEROMETER,
    SensorKind.GYROSCOPE,
    SensorKind.MAGNETOMETER,
    SensorKind.ALTITUDE,
)

_STATS = ("min", "mean", "max")


class EmptySeriesError(DataError):
    pass


class BadPercentError(DataError):
    pass


def summarize(values: Sequence[float]) -> tuple[float, float, float]:
    """(min, mean, max) of a non-empty series."""
    if len(values) == 0:
        raise EmptySeriesError("cannot summarize an empty series")
    arr = np.asarray(values, dtype=float)
    return float(arr.min()), float(arr.mean()), float(arr.max())


def percentile(values: Sequence[float], p: float) -> float:
    """Linear-interpolation percentile.

    Sort ascending, let h = (n-1) * p / 100; the result interpolates
    between the floor(h)-th and next order statistic.
    """
    if len(values) == 0:
        raise EmptySeriesError("cannot take a percentile of an empty series")
    if not 0.0 <= p <= 100.0:
        raise BadPercentError(f"percentile must be in [0, 100], got {p}")
    v = np.sort(np.asarray(values, dtype=float))
    h = (len(v) - 1) * p / 100.0
    lo = math.floor(h)
    if lo + 1 >= len(v):
        return float(v[-1])
    return float(v[lo] + (h - lo) * (v[lo + 1] - v[lo]))


@dataclass(frozen=True)
class ContrastMatrix:
    """Orthonormal polynomial contrasts for one categorical field.

    ``matrix`` has one row per level and one column per polynomial
    degree 1..k-1. Columns are zero-sum, unit-norm and mutually
    orthogonal.
    """

    field: str
    levels: tuple[str, ...]
    matrix: np.ndarray  # (k, k-1)

    def row(self, level: str) -> np.ndarray | None:
        """Contrast row for a level, or None if the level is unseen."""
        try:
            i = self.levels.index(level)
        except ValueError:
            return None
        return self.matrix[i]


def polynomial_contrasts(k: int) -> np.ndarray:
    """Orthonormal polynomial contrast matrix for k ordered levels.

    Monomials of degree 1..k-1 are evaluated at scores 1..k, then
    Gram-Schmidt orthogonalized against the constant column and each
    other, and normalized to unit norm. Returns a (k, k-1) array;
    k = 1 yields a k x 0 matrix.
    """
    if k < 1:
        raise DataError("a categorical field needs at least one level")
    scores = np.arange(1.0, k + 1.0)
    cols = []
    basis = [np.full(k, 1.0 / math.sqrt(k))]  # normalized constant
    for degree in range(1, k):
        v = scores ** degree
        for b in basis:
            v = v - (v @ b) * b
        v = v / np.linalg.norm(v)
        basis.append(v)
        cols.append(v)
    matrix = np.column_stack(cols) if cols else np.empty((k, 0))
    matrix.setflags(write=False)
    return matrix


@dataclass(frozen=True)
class CategoryVocabulary:
    """Known levels per context field, ordered lexicographically at fit
    time, with their contrast matrices."""

    levels: Mapping[str, tuple[str, ...]]
    contrasts: Mapping[str, ContrastMatrix]

    @classmethod
    def fit(cls, contexts: Iterable[DeviceContext]) -> "CategoryVocabulary":
        seen: dict[str, set[str]] = {f: set() for f in DeviceContext.FIELDS}
        n = 0
        for ctx in contexts:
            n += 1
            for f in DeviceContext.FIELDS:
                seen[f].add(getattr(ctx, f))
        if n == 0:
            raise DataError("cannot fit a vocabulary on zero contexts")
        levels = {f: tuple(sorted(vals)) for f, vals in seen.items()}
        return cls(levels=levels, contrasts=_contrasts_for(levels))

    def to_dict(self) -> dict:
        return {f: list(lv) for f, lv in self.levels.items()}

    @classmethod
    def from_dict(cls, d: Mapping[str, Sequence[str]]) -> "CategoryVocabulary":
        levels = {f: tuple(d[f]) for f in DeviceContext.FIELDS}
        return cls(levels=levels, contrasts=_contrasts_for(levels))


def _contrasts_for(
    levels: Mapping[str, tuple[str, ...]]
) -> dict[str, ContrastMatrix]:
    out = {}
    for f, lv in levels.items():
        if len(set(lv)) != len(lv):
            raise DataError(f"duplicate levels for {f}: {lv!r}")
        out[f] = ContrastMatrix(field=f, levels=lv,
                                matrix=polynomial_contrasts(len(lv)))
    return out


def encode_context(
    ctx: DeviceContext, vocab: CategoryVocabulary
) -> tuple[list[str], list[float], int]:
    """Contrast-encode one context.

    Returns (names, values, n_unseen). Unseen levels contribute the
    all-zeros row and bump the unseen counter.
    """
    names: list[str] = []
    values: list[float] = []
    unseen = 0
    for f in DeviceContext.FIELDS:
        cm = vocab.contrasts[f]
        k = len(cm.levels)
        names.extend(f"ctx_{f}_poly{d}" for d in range(1, k))
        row = cm.row(getattr(ctx, f))
        if row is None:
            unseen += 1
            values.extend([0.0] * (k - 1))
        else:
            values.extend(float(x) for x in row)
    return names, values, unseen


@dataclass(frozen=True)
class FeatureConfig:
    """Which feature families to compute.

    ``imu_sensors`` maps each enabled sensor to the summary statistics
    to emit (subset of min/mean/max, kept in that canonical order).
    """

    use_ble_minmeanmax: bool = True
    ble_percentiles: tuple[float, ...] = DEFAULT_PERCENTILES
    use_categoricals: bool = True
    imu_sensors: Mapping[SensorKind, tuple[str, ...]] = field(
        default_factory=lambda: {s: _STATS for s in DEFAULT_IMU_SENSORS})
    use_magnitude: bool = True
    use_linear_approx_distance: bool = True
    use_path_loss: bool = True
    use_friis_distance: bool = True
    radio_params: radio.RadioParams = field(default_factory=radio.RadioParams)

    def __post_init__(self):
        ps = self.ble_percentiles
        if list(ps) != sorted(set(ps)):
            raise DataError(f"percentiles must be sorted, duplicate-free: {ps}")
        for p in ps:
            if not 0.0 < p < 100.0:
                raise DataError(f"percentile must be in (0, 100), got {p}")
        for kind, stats in self.imu_sensors.items():
            if kind is SensorKind.BLUETOOTH:
                raise DataError("Bluetooth is summarized by the BLE families, "
                                "not imu_sensors")
            bad = set(stats) - set(_STATS)
            if bad:
                raise DataError(f"unknown stats {sorted(bad)} for {kind.value}")

    def to_dict(self) -> dict:
        return {
            "use_ble_minmeanmax": self.use_ble_minmeanmax,
            "ble_percentiles": list(self.ble_percentiles),
            "use_categoricals": self.use_categoricals,
            "imu_sensors": {k.value: list(v)
                            for k, v in sorted(self.imu_sensors.items(),
                                               key=lambda kv: kv[0].value)},
            "use_magnitude": self.use_magnitude,
            "use_linear_approx_distance": self.use_linear_approx_distance,
            "use_path_loss": self.use_path_loss,
            "use_friis_distance": self.use_friis_distance,
            "radio_params": self.radio_params.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "FeatureConfig":
        kwargs = dict(d)
        if "ble_percentiles" in kwargs:
            kwargs["ble_percentiles"] = tuple(kwargs["ble_percentiles"])
        if "imu_sensors" in kwargs:
            kwargs["imu_sensors"] = {SensorKind(k): tuple(v)
                                     for k, v in kwargs["imu_sensors"].items()}
        if "radio_params" in kwargs:
            kwargs["radio_params"] = radio.RadioParams(**kwargs["radio_params"])
        return cls(**kwargs)


@dataclass(frozen=True)
class FeatureVector:
    schema: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        if len(self.schema) != len(self.values):
            raise DataError("schema and values lengths differ")


def schema_for(cfg: FeatureConfig, vocab: CategoryVocabulary) -> tuple[str, ...]:
    """Feature-name list for a configuration; identical for all events."""
    names: list[str] = []
    if cfg.use_ble_minmeanmax:
        names += ["ble_rssi_min", "ble_rssi_mean", "ble_rssi_max"]
    names += [f"ble_rssi_p{_fmt_p(p)}" for p in cfg.ble_percentiles]
    if cfg.use_linear_approx_distance:
        names.append("radio_linear_distance")
    if cfg.use_path_loss:
        names.append("radio_path_loss")
    if cfg.use_friis_distance:
        names.append("radio_friis_distance")
    for kind in sorted(cfg.imu_sensors, key=lambda k: k.value):
        stats = [s for s in _STATS if s in cfg.imu_sensors[kind]]
        prefix = kind.value.lower()
        for ch in kind.channel_names:
            names += [f"{prefix}_{ch}_{s}" for s in stats]
        if cfg.use_magnitude and kind.n_channels == 3:
            names += [f"{prefix}_mag_{s}" for s in stats]
        names.append(f"{prefix}_present")
    if cfg.use_categoricals:
        for f in DeviceContext.FIELDS:
            k = len(vocab.levels[f])
            names += [f"ctx_{f}_poly{d}" for d in range(1, k)]
    return tuple(names)


def _fmt_p(p: float) -> str:
    return str(int(p)) if float(p).is_integer() else str(p).replace(".", "_")


def extract(event: Event, cfg: FeatureConfig,
            vocab: CategoryVocabulary) -> FeatureVector:
    """Compute the feature vector for one event.

    Pure: safe to call concurrently. Unseen context levels are encoded
    as zero rows with a warning.
    """
    values: list[float] = []
    rssi = event.rssi()
    mn, mean, mx = summarize(rssi)
    if cfg.use_ble_minmeanmax:
        values += [mn, mean, mx]
    values += [percentile(rssi, p) for p in cfg.ble_percentiles]
    if cfg.use_linear_approx_distance:
        values.append(radio.linear_approx_distance(cfg.radio_params, mean))
    if cfg.use_path_loss:
        values.append(radio.path_loss_attenuation(cfg.radio_params, mean))
    if cfg.use_friis_distance:
        values.append(radio.friis_distance(cfg.radio_params, mean))

    for kind in sorted(cfg.imu_sensors, key=lambda k: k.value):
        stats = [s for s in _STATS if s in cfg.imu_sensors[kind]]
        series = event.series(kind)
        n_mag = kind.n_channels == 3 and cfg.use_magnitude
        if not series:
            width = len(stats) * (kind.n_channels + (1 if n_mag else 0))
            values += [0.0] * width + [0.0]  # zeros + presence flag 0
            continue
        arr = np.asarray(series, dtype=float)  # (n, channels)
        for ch in range(kind.n_channels):
            values += _stat_values(arr[:, ch], stats)
        if n_mag:
            values += _stat_values(np.linalg.norm(arr, axis=1), stats)
        values.append(1.0)

    if cfg.use_categoricals:
        _, ctx_values, unseen = encode_context(event.context, vocab)
        if unseen:
            logger.warning("event %s: %d unseen context level(s) encoded as "
                           "zeros", event.id, unseen)
        values += ctx_values

    schema = schema_for(cfg, vocab)
    vec = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(vec)):
        raise DataError(f"event {event.id}: non-finite feature value")
    return FeatureVector(schema=schema, values=vec)


def _stat_values(series: np.ndarray, stats: Sequence[str]) -> list[float]:
    out = []
    for s in stats:
        if s == "min":
            out.append(float(series.min()))
        elif s == "mean":
            out.append(float(series.mean()))
        else:
            out.append(float(series.max()))
    return out


def build_matrix(
    events: Sequence[Event], cfg: FeatureConfig, vocab: CategoryVocabulary
) -> tuple[np.ndarray, tuple[str, ...]]:
    """Stack per-event vectors into an (n_events, n_features) matrix."""
    schema = schema_for(cfg, vocab)
    rows = []
    for ev in events:
        fv = extract(ev, cfg, vocab)
        if fv.schema != schema:
            raise DataError(f"schema drift on event {ev.id}")
        rows.append(fv.values)
    return np.asarray(rows, dtype=float), schema


def write_feature_csv(path, events: Sequence[Event], cfg: FeatureConfig,
                      vocab: CategoryVocabulary,
                      labels: Mapping[str, float] | None = None) -> None:
    """Export a feature matrix as CSV with the schema as header row.

    The first column is the event id; with ``labels`` given, a final
    ``distance`` column is appended.
    """
    X, schema = build_matrix(events, cfg, vocab)
    header = ["event_id", *schema] + (["distance"] if labels is not None else [])
    lines = [",".join(header)]
    for ev, row in zip(events, X):
        cells = [ev.id, *(repr(float(v)) for v in row)]
        if labels is not None:
            cells.append(repr(float(labels[ev.id])))
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
