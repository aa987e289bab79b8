"""Miss / false-alarm rates and the normalized decision cost function.

Predictions and ground truth are distance classes in meters. For a
condition threshold D, "contact" means distance <= D (the threshold
distance itself counts as contact). Then

    p_miss = P(predicted non-contact | true contact)
    p_fa   = P(predicted contact     | true non-contact)
    nDCF   = w_miss * p_miss + w_fa * p_fa

With the default unit weights the trivial always-far system scores
exactly 1. The standard report covers four conditions: fine-grain
events at D = 1.2, 1.8, 3.0 m and coarse-grain events at D = 1.8 m,
plus their arithmetic mean.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Mapping, Sequence

from .corpus import Grain, KeyTable
from .errors import DataError

logger = logging.getLogger(__name__)


class LengthMismatchError(DataError):
    pass


class EmptyInputError(DataError):
    pass


class MissingPredictionError(DataError):
    def __init__(self, event_id: str):
        super().__init__(f"no prediction for event {event_id!r}")
        self.event_id = event_id


@dataclass(frozen=True)
class EvalCondition:
    grain: Grain
    threshold_d: float

    @property
    def label(self) -> str:
        return f"{self.grain.value}_{self.threshold_d}"


#: The four standard report conditions.
STANDARD_CONDITIONS = (
    EvalCondition(Grain.FINE, 1.2),
    EvalCondition(Grain.FINE, 1.8),
    EvalCondition(Grain.FINE, 3.0),
    EvalCondition(Grain.COARSE, 1.8),
)


@dataclass(frozen=True)
class CostWeights:
    w_miss: float = 1.0
    w_fa: float = 1.0

    def __post_init__(self):
        if self.w_miss <= 0 or self.w_fa <= 0:
            raise DataError("cost weights must be positive")


@dataclass(frozen=True)
class ConditionResult:
    condition: EvalCondition
    p_miss: float
    p_fa: float
    ndcf: float
    n_contact: int
    n_noncontact: int
    empty_denominator: bool = False


@dataclass(frozen=True)
class NdcfReport:
    conditions: tuple[ConditionResult, ...]
    average_ndcf: float
    weights: CostWeights

    def by_label(self) -> dict[str, ConditionResult]:
        return {c.condition.label: c for c in self.conditions}

    def to_dict(self) -> dict:
        return {
            "conditions": [
                {
                    "grain": c.condition.grain.value,
                    "threshold_d": c.condition.threshold_d,
                    "p_miss": c.p_miss,
                    "p_fa": c.p_fa,
                    "ndcf": c.ndcf,
                    "n_contact": c.n_contact,
                    "n_noncontact": c.n_noncontact,
                    "empty_denominator": c.empty_denominator,
                }
                for c in self.conditions
            ],
            "average_ndcf": self.average_ndcf,
            "weights": {"w_miss": self.weights.w_miss,
                        "w_fa": self.weights.w_fa},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def miss_fa(
    pred: Sequence[float], truth: Sequence[float], d_threshold: float
) -> tuple[float, float, bool]:
    """Miss and false-alarm rates after binarizing at ``d_threshold``.

    Returns (p_miss, p_fa, empty_denominator); a side with no events
    contributes rate 0 and sets the flag.
    """
    if len(pred) != len(truth):
        raise LengthMismatchError(
            f"{len(pred)} predictions vs {len(truth)} truths")
    if len(pred) == 0:
        raise EmptyInputError("no events to score")
    n_contact = n_noncontact = missed = false_alarms = 0
    for p, t in zip(pred, truth):
        if t <= d_threshold:
            n_contact += 1
            if p > d_threshold:
                missed += 1
        else:
            n_noncontact += 1
            if p <= d_threshold:
                false_alarms += 1
    empty = n_contact == 0 or n_noncontact == 0
    p_miss = missed / n_contact if n_contact else 0.0
    p_fa = false_alarms / n_noncontact if n_noncontact else 0.0
    return p_miss, p_fa, empty


def ndcf(p_miss: float, p_fa: float, w: CostWeights = CostWeights()) -> float:
    """Weighted decision cost: w_miss * p_miss + w_fa * p_fa."""
    if not (0.0 <= p_miss <= 1.0 and 0.0 <= p_fa <= 1.0):
        raise DataError(f"rates must be in [0, 1]: ({p_miss}, {p_fa})")
    return w.w_miss * p_miss + w.w_fa * p_fa


def evaluate(
    pred_table: Mapping[str, float],
    keys: KeyTable,
    w: CostWeights = CostWeights(),
) -> NdcfReport:
    """Score a prediction table over the four standard conditions.

    Every key id must have a prediction. Fine conditions are computed
    over fine-grain events only, the coarse condition over coarse-grain
    events only; the average is the mean of the four condition scores.
    """
    for event_id in keys.entries:
        if event_id not in pred_table:
            raise MissingPredictionError(event_id)

    results = []
    for cond in STANDARD_CONDITIONS:
        ids = [i for i, e in keys.entries.items() if e.grain is cond.grain]
        truth = [keys.entries[i].distance for i in ids]
        pred = [pred_table[i] for i in ids]
        p_miss, p_fa, empty = miss_fa(pred, truth, cond.threshold_d)
        if empty:
            logger.warning(
                "condition %s: one side empty, rate forced to 0", cond.label)
        n_contact = sum(1 for t in truth if t <= cond.threshold_d)
        results.append(ConditionResult(
            condition=cond,
            p_miss=p_miss,
            p_fa=p_fa,
            ndcf=ndcf(p_miss, p_fa, w),
            n_contact=n_contact,
            n_noncontact=len(truth) - n_contact,
            empty_denominator=empty,
        ))
    average = sum(r.ndcf for r in results) / len(results)
    return NdcfReport(conditions=tuple(results), average_ndcf=average, weights=w)


def format_report(report: NdcfReport, label: str = "") -> str:
    """Render a report as an aligned text table."""
    heads = [c.condition.label for c in report.conditions] + ["average"]
    cells = [f"{c.ndcf:.3f}" for c in report.conditions]
    cells.append(f"{report.average_ndcf:.3f}")
    widths = [max(len(h), len(v)) for h, v in zip(heads, cells)]
    name_w = max(len(label), len("nDCF"))
    lines = [
        " | ".join([label.ljust(name_w)]
                   + [h.rjust(w) for h, w in zip(heads, widths)]),
        "-+-".join(["-" * name_w] + ["-" * w for w in widths]),
        " | ".join(["nDCF".ljust(name_w)]
                   + [v.rjust(w) for v, w in zip(cells, widths)]),
    ]
    return "\n".join(lines) + "\n"


def read_predictions(text: str) -> dict[str, float]:
    """Parse a prediction TSV (``id<TAB>distance``, no header)."""
    table: dict[str, float] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise DataError(f"prediction line {line_no}: expected id<TAB>distance")
        try:
            table[parts[0]] = float(parts[1])
        except ValueError:
            raise DataError(f"prediction line {line_no}: bad distance {parts[1]!r}")
    return table


def write_predictions(table: Mapping[str, float]) -> str:
    """Serialize predictions as TSV sorted by id (deterministic)."""
    return "".join(f"{i}\t{float(table[i])!r}\n" for i in sorted(table))
