"""Contact-event corpus: file grammar, parsing, and ground-truth keys.

Event files (``.csv``) mix header lines and data lines:

    #TXDevice,phone_a            header: ``#<Key>,<Value>``
    #StepSize,10.0
    0.10,Bluetooth,-61.0         data: ``<timestamp>,<Sensor>,<v1>[,<v2>,<v3>]``
    0.12,Accelerometer,0.01,-0.02,0.98

Blank lines are ignored, as are ``#`` lines without a comma (comments).
Encoding is UTF-8 with LF or CRLF endings. Mandatory header keys are
TXDevice, RXDevice, TXPower, TXPose, RXPose, TXCarry, RXCarry and
StepSize; unknown header keys are kept in ``Event.extra_header`` but
otherwise ignored. Unknown sensor names are kept in
``Event.unknown_readings`` with whatever arity the line carried.

Key files (``.tsv``) have the header row ``id<TAB>distance<TAB>step_size
<TAB>grain`` followed by one row per event; grain is ``fine`` or
``coarse``.

Parsing is strict by default: any line matching neither grammar is an
error. ``strict=False`` skips malformed lines with a logged warning so
real-world files with stray content can still be ingested.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import DataError

logger = logging.getLogger(__name__)

#: The four distance classes, meters.
DISTANCE_CLASSES = (1.2, 1.8, 3.0, 4.5)

#: Valid step sizes, seconds.
STEP_SIZES = tuple(float(s) for s in range(10, 151, 10))

#: Mandatory header keys, in canonical write order.
HEADER_FIELDS = (
    "TXDevice",
    "RXDevice",
    "TXPower",
    "TXPose",
    "RXPose",
    "TXCarry",
    "RXCarry",
    "StepSize",
)

# Timestamps at or above this are treated as absolute epochs and
# re-based to the first timestamp (only relative timing matters).
_EPOCH_THRESHOLD = 1e6


class SensorKind(enum.Enum):
    BLUETOOTH = "Bluetooth"
    ACCELEROMETER = "Accelerometer"
    GYROSCOPE = "Gyroscope"
    MAGNETOMETER = "Magnetometer"
    ATTITUDE = "Attitude"
    GRAVITY = "Gravity"
    ALTITUDE = "Altitude"
    HEADING = "Heading"

    @property
    def channel_names(self) -> tuple[str, ...]:
        return _CHANNELS[self]

    @property
    def n_channels(self) -> int:
        return len(_CHANNELS[self])


_CHANNELS: dict[SensorKind, tuple[str, ...]] = {
    SensorKind.BLUETOOTH: ("rssi",),
    SensorKind.ACCELEROMETER: ("x", "y", "z"),
    SensorKind.GYROSCOPE: ("x", "y", "z"),
    SensorKind.MAGNETOMETER: ("x", "y", "z"),
    SensorKind.ATTITUDE: ("roll", "pitch", "yaw"),
    SensorKind.GRAVITY: ("x", "y", "z"),
    SensorKind.ALTITUDE: ("value",),
    SensorKind.HEADING: ("value",),
}

_KIND_BY_NAME = {k.value: k for k in SensorKind}


class Grain(enum.Enum):
    FINE = "fine"
    COARSE = "coarse"


class CorpusError(DataError):
    pass


class MalformedLineError(CorpusError):
    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no


class MissingHeaderFieldError(CorpusError):
    def __init__(self, name: str):
        super().__init__(f"missing mandatory header field {name!r}")
        self.name = name


class ChannelArityError(CorpusError):
    def __init__(self, kind: SensorKind, got: int, line_no: int):
        super().__init__(
            f"line {line_no}: {kind.value} expects {kind.n_channels} "
            f"value(s), got {got}"
        )
        self.kind = kind
        self.got = got
        self.line_no = line_no


class NoBluetoothError(CorpusError):
    def __init__(self, event_id: str):
        super().__init__(f"event {event_id!r} has no Bluetooth reading")


class DuplicateIdError(CorpusError):
    def __init__(self, event_id: str):
        super().__init__(f"duplicate event id {event_id!r}")
        self.event_id = event_id


class BadDistanceError(CorpusError):
    def __init__(self, value: float):
        super().__init__(
            f"distance {value!r} not in {list(DISTANCE_CLASSES)}"
        )
        self.value = value


class MalformedRowError(CorpusError):
    def __init__(self, line_no: int, reason: str):
        super().__init__(f"row {line_no}: {reason}")
        self.line_no = line_no


@dataclass(frozen=True)
class Reading:
    """One timestamped sensor sample. ``values`` length matches the kind."""

    timestamp: float
    kind: SensorKind
    values: tuple[float, ...]


@dataclass(frozen=True)
class UnknownReading:
    """A data line whose sensor name is not a known :class:`SensorKind`."""

    timestamp: float
    sensor: str
    values: tuple[float, ...]


@dataclass(frozen=True)
class DeviceContext:
    """Categorical experiment conditions from the event header."""

    tx_model: str
    rx_model: str
    tx_power: str
    tx_pose: str
    rx_pose: str
    tx_carry: str
    rx_carry: str

    FIELDS = ("tx_model", "rx_model", "tx_power", "tx_pose",
              "rx_pose", "tx_carry", "rx_carry")

    def as_dict(self) -> dict[str, str]:
        return {f: getattr(self, f) for f in self.FIELDS}


# Header key -> DeviceContext attribute.
_CONTEXT_HEADERS = {
    "TXDevice": "tx_model",
    "RXDevice": "rx_model",
    "TXPower": "tx_power",
    "TXPose": "tx_pose",
    "RXPose": "rx_pose",
    "TXCarry": "tx_carry",
    "RXCarry": "rx_carry",
}


@dataclass(frozen=True)
class Event:
    """One parsed contact event.

    ``readings`` is sorted ascending by timestamp (stable: equal
    timestamps keep input order). Every event carries at least one
    Bluetooth reading.
    """

    id: str
    context: DeviceContext
    step_size: float
    readings: tuple[Reading, ...]
    unknown_readings: tuple[UnknownReading, ...] = ()
    extra_header: Mapping[str, str] = field(default_factory=dict)

    def series(self, kind: SensorKind) -> list[tuple[float, ...]]:
        """Channel-value tuples for one sensor, in time order."""
        return [r.values for r in self.readings if r.kind is kind]

    def rssi(self) -> list[float]:
        return [r.values[0] for r in self.readings
                if r.kind is SensorKind.BLUETOOTH]


@dataclass(frozen=True)
class KeyEntry:
    distance: float
    step_size: float
    grain: Grain


@dataclass(frozen=True)
class KeyTable:
    """Ground truth per event id: distance class, step size, grain."""

    entries: Mapping[str, KeyEntry]

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, event_id: str) -> bool:
        return event_id in self.entries

    def __getitem__(self, event_id: str) -> KeyEntry:
        return self.entries[event_id]

    def ids(self) -> list[str]:
        return sorted(self.entries)


@dataclass(frozen=True)
class LabeledDataset:
    """Events joined with ground truth, plus unmatched ids per side."""

    records: tuple[tuple[Event, float, Grain], ...]
    orphan_event_ids: tuple[str, ...]
    orphan_key_ids: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.records)


def parse_event(
    text: str,
    id: str,
    *,
    strict: bool = True,
    header_aliases: Mapping[str, str] | None = None,
) -> Event:
    """Parse raw event-file contents into an :class:`Event`.

    Args:
        text: file contents (UTF-8 decoded).
        id: event id, conventionally the file stem.
        strict: raise on malformed lines; if False, skip them with a
            warning.
        header_aliases: optional map from raw header keys to canonical
            ones (e.g. ``{"TxPowerLevel": "TXPower"}``) for ingesting
            corpora whose header names deviate.

    Raises:
        MalformedLineError, ChannelArityError: strict mode only.
        MissingHeaderFieldError: a mandatory header is absent.
        NoBluetoothError: no RSSI reading survived parsing.
    """
    aliases = dict(header_aliases or {})
    header: dict[str, str] = {}
    readings: list[Reading] = []
    unknown: list[UnknownReading] = []

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:]
            if "," not in body:
                continue  # comment
            key, _, value = body.partition(",")
            key = key.strip()
            key = aliases.get(key, key)
            header[key] = value.strip()
            continue

        parts = [p.strip() for p in line.split(",")]
        if len(parts) < 3:
            _reject(strict, MalformedLineError(
                line_no, f"expected <timestamp>,<sensor>,<values...>: {line!r}"))
            continue
        try:
            ts = float(parts[0])
            values = tuple(float(v) for v in parts[2:])
        except ValueError:
            _reject(strict, MalformedLineError(
                line_no, f"non-numeric field: {line!r}"))
            continue
        if not math.isfinite(ts) or ts < 0:
            _reject(strict, MalformedLineError(
                line_no, f"bad timestamp {parts[0]}"))
            continue

        kind = _KIND_BY_NAME.get(parts[1])
        if kind is None:
            unknown.append(UnknownReading(ts, parts[1], values))
            continue
        if len(values) != kind.n_channels:
            _reject(strict, ChannelArityError(kind, len(values), line_no))
            continue
        readings.append(Reading(ts, kind, values))

    for name in HEADER_FIELDS:
        if name not in header:
            raise MissingHeaderFieldError(name)

    try:
        step_size = float(header["StepSize"])
    except ValueError:
        raise CorpusError(f"StepSize not numeric: {header['StepSize']!r}")
    if step_size not in STEP_SIZES:
        if strict:
            raise CorpusError(
                f"StepSize {step_size} not in {{10, 20, ..., 150}}")
        logger.warning("event %s: nonstandard StepSize %s", id, step_size)

    context = DeviceContext(**{
        attr: header[key] for key, attr in _CONTEXT_HEADERS.items()
    })
    extra = {k: v for k, v in header.items()
             if k not in _CONTEXT_HEADERS and k != "StepSize"}

    if not any(r.kind is SensorKind.BLUETOOTH for r in readings):
        raise NoBluetoothError(id)

    # Re-base absolute epoch timestamps to event-relative seconds.
    all_ts = [r.timestamp for r in readings] + [u.timestamp for u in unknown]
    t0 = min(all_ts)
    if t0 >= _EPOCH_THRESHOLD:
        readings = [Reading(r.timestamp - t0, r.kind, r.values)
                    for r in readings]
        unknown = [UnknownReading(u.timestamp - t0, u.sensor, u.values)
                   for u in unknown]

    readings.sort(key=lambda r: r.timestamp)  # stable: ties keep input order
    unknown.sort(key=lambda u: u.timestamp)

    return Event(
        id=id,
        context=context,
        step_size=step_size,
        readings=tuple(readings),
        unknown_readings=tuple(unknown),
        extra_header=extra,
    )


def _reject(strict: bool, err: CorpusError) -> None:
    if strict:
        raise err
    logger.warning("skipping: %s", err)


def write_event(event: Event) -> str:
    """Serialize an event in canonical form; re-parsing is lossless."""
    lines = []
    for key in HEADER_FIELDS:
        if key == "StepSize":
            lines.append(f"#StepSize,{float(event.step_size)!r}")
        else:
            lines.append(f"#{key},{getattr(event.context, _CONTEXT_HEADERS[key])}")
    for key in sorted(event.extra_header):
        lines.append(f"#{key},{event.extra_header[key]}")
    for r in event.readings:
        vals = ",".join(repr(float(v)) for v in r.values)
        lines.append(f"{float(r.timestamp)!r},{r.kind.value},{vals}")
    for u in event.unknown_readings:
        vals = ",".join(repr(float(v)) for v in u.values)
        lines.append(f"{float(u.timestamp)!r},{u.sensor},{vals}")
    return "\n".join(lines) + "\n"


def parse_key(text: str, *, strict: bool = True) -> KeyTable:
    """Parse a key file into a :class:`KeyTable`.

    Raises:
        MalformedRowError: bad header or row shape (strict mode).
        BadDistanceError: distance outside the four classes.
        DuplicateIdError: repeated event id.
    """
    lines = text.splitlines()
    if not lines or [c.strip() for c in lines[0].split("\t")] != [
            "id", "distance", "step_size", "grain"]:
        raise MalformedRowError(1, "expected header 'id\\tdistance\\tstep_size\\tgrain'")

    entries: dict[str, KeyEntry] = {}
    for line_no, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if not line:
            continue
        parts = [p.strip() for p in line.split("\t")]
        if len(parts) != 4:
            _reject(strict, MalformedRowError(line_no, f"expected 4 columns, got {len(parts)}"))
            continue
        event_id, dist_s, step_s, grain_s = parts
        try:
            distance = float(dist_s)
            step_size = float(step_s)
        except ValueError:
            _reject(strict, MalformedRowError(line_no, f"non-numeric field: {line!r}"))
            continue
        if distance not in DISTANCE_CLASSES:
            raise BadDistanceError(distance)
        try:
            grain = Grain(grain_s.lower())
        except ValueError:
            _reject(strict, MalformedRowError(line_no, f"grain must be fine|coarse, got {grain_s!r}"))
            continue
        if event_id in entries:
            raise DuplicateIdError(event_id)
        entries[event_id] = KeyEntry(distance, step_size, grain)
    return KeyTable(entries)


def write_key(table: KeyTable) -> str:
    """Serialize a key table (rows sorted by id)."""
    lines = ["id\tdistance\tstep_size\tgrain"]
    for event_id in sorted(table.entries):
        e = table.entries[event_id]
        lines.append(f"{event_id}\t{e.distance!r}\t{e.step_size!r}\t{e.grain.value}")
    return "\n".join(lines) + "\n"


def join(events: Sequence[Event], keys: KeyTable) -> LabeledDataset:
    """Pair events with their key entries; unmatched ids are reported,
    not fatal."""
    records = []
    matched = set()
    orphan_events = []
    for ev in events:
        entry = keys.entries.get(ev.id)
        if entry is None:
            orphan_events.append(ev.id)
            continue
        matched.add(ev.id)
        records.append((ev, entry.distance, entry.grain))
    orphan_keys = sorted(set(keys.entries) - matched)
    if orphan_events or orphan_keys:
        logger.warning(
            "join: %d event(s) without key, %d key(s) without event",
            len(orphan_events), len(orphan_keys))
    return LabeledDataset(
        records=tuple(records),
        orphan_event_ids=tuple(orphan_events),
        orphan_key_ids=tuple(orphan_keys),
    )


def read_event_file(
    path: Path | str,
    *,
    strict: bool = True,
    header_aliases: Mapping[str, str] | None = None,
) -> Event:
    path = Path(path)
    return parse_event(path.read_text(encoding="utf-8"), path.stem,
                       strict=strict, header_aliases=header_aliases)


def load_events(
    events_dir: Path | str,
    *,
    strict: bool = True,
    header_aliases: Mapping[str, str] | None = None,
) -> list[Event]:
    """Read every ``*.csv`` under a directory, sorted by filename."""
    events_dir = Path(events_dir)
    paths = sorted(events_dir.glob("*.csv"))
    if not paths:
        raise CorpusError(f"no event files (*.csv) in {events_dir}")
    return [read_event_file(p, strict=strict, header_aliases=header_aliases)
            for p in paths]


def load_key(path: Path | str, *, strict: bool = True) -> KeyTable:
    return parse_key(Path(path).read_text(encoding="utf-8"), strict=strict)


def write_corpus(events: Iterable[Event], keys: KeyTable,
                 events_dir: Path | str, key_path: Path | str) -> None:
    """Write events (one file per event) and the key table to disk."""
    events_dir = Path(events_dir)
    events_dir.mkdir(parents=True, exist_ok=True)
    for ev in events:
        (events_dir / f"{ev.id}.csv").write_text(write_event(ev), encoding="utf-8")
    key_path = Path(key_path)
    key_path.parent.mkdir(parents=True, exist_ok=True)
    key_path.write_text(write_key(keys), encoding="utf-8")
