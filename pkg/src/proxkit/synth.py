"""Deterministic synthetic corpus generator with a planted distance signal.

Events follow the structured-protocol shape: a handful of fixed-distance
looks separated by the step size, each contributing a burst of RSSI and
IMU readings. RSSI follows a log-distance law with per-context dB
offsets and Gaussian shadowing, so the distance class is recoverable by
construction and the strength of the signal is fully controlled by the
spec. IMU channels are pure noise unless the drift mode plants a
distance-proportional component in one channel.

Every event draws from its own counter-based stream
``np.random.default_rng((seed, event_index))``, so generation is
reproducible and order-independent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .corpus import (
    DISTANCE_CLASSES,
    STEP_SIZES,
    DeviceContext,
    Event,
    Grain,
    KeyEntry,
    KeyTable,
    Reading,
    SensorKind,
)
from .errors import UsageError

LOOK_SECONDS = 4.0

DEFAULT_VOCAB: dict[str, tuple[str, ...]] = {
    "tx_model": ("galaxy10", "iphone8", "pixel3"),
    "rx_model": ("galaxy10", "iphone8", "pixel3"),
    "tx_power": ("high", "low", "mid"),
    "tx_pose": ("landscape", "portrait"),
    "rx_pose": ("hand", "pocket", "table"),
    "tx_carry": ("back", "front"),
    "rx_carry": ("back", "front"),
}

# dB shifts per categorical level; fields absent here do not move RSSI
DEFAULT_CONTEXT_OFFSETS: dict[str, dict[str, float]] = {
    "tx_power": {"low": -6.0, "mid": 0.0, "high": 6.0},
    "rx_pose": {"hand": 0.0, "pocket": -3.0, "table": -1.5},
    "rx_carry": {"front": 1.5, "back": -1.5},
}

DEFAULT_IMU_NOISE: dict[SensorKind, float] = {
    SensorKind.ACCELEROMETER: 1.0,
    SensorKind.GYROSCOPE: 0.5,
    SensorKind.MAGNETOMETER: 30.0,
    SensorKind.ALTITUDE: 0.5,
}


class BadSpecError(UsageError):
    """GeneratorSpec violates one of its invariants."""


@dataclass(frozen=True)
class ImuDrift:
    """Optional distance-proportional component planted in one IMU channel.

    When enabled, ``per_meter * distance`` is added to every sample of
    ``sensor``'s channel ``channel``, giving the pipeline a non-radio
    route to the label.
    """

    enabled: bool = False
    sensor: SensorKind = SensorKind.ACCELEROMETER
    channel: int = 0
    per_meter: float = 1.0


@dataclass(frozen=True)
class GeneratorSpec:
    """Complete description of a synthetic corpus.

    ``events_per_cell`` counts events for each (grain, class) pair.
    RSSI per look: ``tx_ref - 10 * n_exponent * log10(d) +
    offset(context) + Normal(0, shadowing_sigma)`` per sample, where
    offset sums the per-level dB shifts of ``context_offsets``.
    """

    events_per_cell: int = 200
    classes: tuple[float, ...] = DISTANCE_CLASSES
    grains: tuple[Grain, ...] = (Grain.FINE, Grain.COARSE)
    step_sizes: tuple[float, ...] = (10.0, 30.0, 60.0)
    looks_per_event: int = 4
    rssi_per_look: int = 20
    imu_per_look: int = 10
    tx_ref: float = -45.0
    n_exponent: float = 2.0
    shadowing_sigma: float = 4.0
    vocab: Mapping[str, tuple[str, ...]] = field(
        default_factory=lambda: dict(DEFAULT_VOCAB))
    context_offsets: Mapping[str, Mapping[str, float]] = field(
        default_factory=lambda: {k: dict(v)
                                 for k, v in DEFAULT_CONTEXT_OFFSETS.items()})
    imu_sensors: tuple[SensorKind, ...] = (
        SensorKind.ACCELEROMETER, SensorKind.GYROSCOPE,
        SensorKind.MAGNETOMETER, SensorKind.ALTITUDE)
    imu_noise: Mapping[SensorKind, float] = field(
        default_factory=lambda: dict(DEFAULT_IMU_NOISE))
    drift: ImuDrift = ImuDrift()
    seed: int = 0

    def __post_init__(self):
        if self.events_per_cell < 1:
            raise BadSpecError("events_per_cell must be >= 1")
        if self.shadowing_sigma < 0:
            raise BadSpecError("shadowing_sigma must be >= 0")
        if self.looks_per_event < 1 or self.rssi_per_look < 1:
            raise BadSpecError("need at least one look and one RSSI sample")
        if self.imu_per_look < 1:
            raise BadSpecError("imu_per_look must be >= 1")
        if not self.classes or any(d <= 0 for d in self.classes):
            raise BadSpecError("classes must be non-empty and positive")
        if not self.grains:
            raise BadSpecError("at least one grain is required")
        if not self.step_sizes:
            raise BadSpecError("at least one step size is required")
        for s in self.step_sizes:
            if s not in STEP_SIZES:
                raise BadSpecError(
                    f"step size {s} is outside the valid protocol set")
        missing = set(DeviceContext.FIELDS) - set(self.vocab)
        if missing:
            raise BadSpecError(
                f"vocab missing context fields: {sorted(missing)}")
        for fname, levels in self.vocab.items():
            if fname not in DeviceContext.FIELDS:
                raise BadSpecError(f"unknown context field {fname!r} in vocab")
            if len(levels) < 1:
                raise BadSpecError(f"vocab field {fname!r} has no levels")
            if len(set(levels)) != len(levels):
                raise BadSpecError(f"vocab field {fname!r} has duplicates")
        for fname, shifts in self.context_offsets.items():
            if fname not in self.vocab:
                raise BadSpecError(
                    f"context_offsets field {fname!r} not in vocab")
            unknown = set(shifts) - set(self.vocab[fname])
            if unknown:
                raise BadSpecError(
                    f"context_offsets for {fname!r} name unknown levels "
                    f"{sorted(unknown)}")
        for kind in self.imu_sensors:
            if kind is SensorKind.BLUETOOTH:
                raise BadSpecError("Bluetooth is not an IMU sensor")
        if self.drift.enabled:
            if self.drift.sensor not in self.imu_sensors:
                raise BadSpecError(
                    "drift sensor must be one of the generated IMU sensors")
            if not 0 <= self.drift.channel < self.drift.sensor.n_channels:
                raise BadSpecError(
                    f"drift channel {self.drift.channel} out of range for "
                    f"{self.drift.sensor.value}")


def _context_offset(spec: GeneratorSpec, ctx: DeviceContext) -> float:
    total = 0.0
    for fname, shifts in spec.context_offsets.items():
        total += shifts.get(getattr(ctx, fname), 0.0)
    return total


def _generate_event(spec: GeneratorSpec, index: int, distance: float) -> Event:
    rng = np.random.default_rng((spec.seed, index))
    levels = {fname: spec.vocab[fname][int(rng.integers(len(spec.vocab[fname])))]
              for fname in DeviceContext.FIELDS}
    ctx = DeviceContext(**levels)
    step = spec.step_sizes[int(rng.integers(len(spec.step_sizes)))]

    base_rssi = (spec.tx_ref - 10.0 * spec.n_exponent * math.log10(distance)
                 + _context_offset(spec, ctx))
    noise = spec.imu_noise
    readings: list[Reading] = []
    for look in range(spec.looks_per_event):
        t0 = look * step
        rssi_ts = t0 + np.arange(spec.rssi_per_look) * (
            LOOK_SECONDS / spec.rssi_per_look)
        rssi = base_rssi + rng.normal(0.0, spec.shadowing_sigma,
                                      spec.rssi_per_look)
        for ts, v in zip(rssi_ts, rssi):
            readings.append(Reading(float(ts), SensorKind.BLUETOOTH,
                                    (float(v),)))
        imu_ts = t0 + np.arange(spec.imu_per_look) * (
            LOOK_SECONDS / spec.imu_per_look)
        for kind in spec.imu_sensors:
            scale = noise.get(kind, 1.0)
            samples = scale * rng.standard_normal(
                (spec.imu_per_look, kind.n_channels))
            if (spec.drift.enabled and kind is spec.drift.sensor):
                samples[:, spec.drift.channel] += \
                    spec.drift.per_meter * distance
            for ts, row in zip(imu_ts, samples):
                readings.append(Reading(float(ts), kind,
                                        tuple(float(v) for v in row)))
    readings.sort(key=lambda r: r.timestamp)
    return Event(id=f"ev{index:05d}", context=ctx, step_size=step,
                 readings=tuple(readings))


def generate(spec: GeneratorSpec) -> tuple[list[Event], KeyTable]:
    """Generate the full corpus described by the spec.

    Events are emitted cell by cell: for each grain, for each distance
    class, ``events_per_cell`` events with consecutive indices.
    """
    events: list[Event] = []
    entries: dict[str, KeyEntry] = {}
    index = 0
    for grain in spec.grains:
        for distance in spec.classes:
            for _ in range(spec.events_per_cell):
                ev = _generate_event(spec, index, distance)
                events.append(ev)
                entries[ev.id] = KeyEntry(distance, ev.step_size, grain)
                index += 1
    return events, KeyTable(entries)


def split_corpus(
    events: list[Event],
    keys: KeyTable,
    fractions: tuple[float, float, float] = (0.6, 0.2, 0.2),
) -> dict[str, tuple[list[Event], KeyTable]]:
    """Stratified train/dev/test split.

    Events are grouped by (grain, distance) and each group is cut at the
    cumulative fraction boundaries in corpus order, so the class balance
    of every split matches the corpus and the result is deterministic.
    """
    if len(fractions) != 3 or any(f < 0 for f in fractions) \
            or abs(sum(fractions) - 1.0) > 1e-9:
        raise BadSpecError("split fractions must be 3 non-negatives summing to 1")

    cells: dict[tuple, list[Event]] = {}
    for ev in events:
        entry = keys[ev.id]
        cells.setdefault((entry.grain, entry.distance), []).append(ev)

    parts: dict[str, list[Event]] = {"train": [], "dev": [], "test": []}
    for cell_events in cells.values():
        n = len(cell_events)
        c1 = round(fractions[0] * n)
        c2 = c1 + round(fractions[1] * n)
        parts["train"].extend(cell_events[:c1])
        parts["dev"].extend(cell_events[c1:c2])
        parts["test"].extend(cell_events[c2:])

    out: dict[str, tuple[list[Event], KeyTable]] = {}
    for name, evs in parts.items():
        entries = {ev.id: keys[ev.id] for ev in evs}
        out[name] = (evs, KeyTable(entries))
    return out
