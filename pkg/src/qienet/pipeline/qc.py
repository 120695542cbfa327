"""Quality control of hourly GHI observations: physical threshold, then IQR upper whisker."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .solar import extraterrestrial_ghi_many
from .stations import StationRecord


@dataclass(frozen=True)
class Whisker:
    q1: float
    q3: float
    upper: float
    n: int


@dataclass
class StageCount:
    stage: str
    input: int
    retained: int
    rejected: int

    def to_dict(self) -> dict:
        return {"stage": self.stage, "input": self.input, "retained": self.retained, "rejected": self.rejected}


def physical_threshold_filter(records: list[StationRecord]):
    """Keep records whose GHI does not exceed the hourly extraterrestrial GHI."""
    records = list(records)
    if not records:
        return [], []
    cap = extraterrestrial_ghi_many(
        [r.timestamp for r in records], [r.latitude for r in records], [r.longitude for r in records]
    )
    retained, rejected = [], []
    for r, c in zip(records, cap):
        (retained if r.ghi <= c else rejected).append(r)
    return retained, rejected


def upper_whisker(values) -> Whisker:
    """Q3 + 1.5 (Q3 - Q1) with linearly interpolated quartiles."""
    v = np.asarray(values, dtype=np.float64)
    q1, q3 = np.quantile(v, [0.25, 0.75], method="linear")
    return Whisker(float(q1), float(q3), float(q3 + 1.5 * (q3 - q1)), int(v.size))


def iqr_filter(records: list[StationRecord]):
    """Per hour-of-day group, reject values strictly above the upper whisker.

    Returns ``(retained, rejected, whiskers)`` with ``whiskers`` keyed by UTC hour.
    Input order is preserved within each output list.
    """
    records = list(records)
    groups = defaultdict(list)
    for r in records:
        groups[r.timestamp.hour].append(r.ghi)
    whiskers = {h: upper_whisker(v) for h, v in sorted(groups.items())}
    retained, rejected = [], []
    for r in records:
        (rejected if r.ghi > whiskers[r.timestamp.hour].upper else retained).append(r)
    return retained, rejected, whiskers


def run_qc(records: list[StationRecord]):
    """Threshold then IQR. Returns ``(retained, stage_counts, whiskers)``."""
    records = list(records)
    kept1, rej1 = physical_threshold_filter(records)
    kept2, rej2, whiskers = iqr_filter(kept1)
    stages = [
        StageCount("physical_threshold", len(records), len(kept1), len(rej1)),
        StageCount("iqr_upper_whisker", len(kept1), len(kept2), len(rej2)),
    ]
    return kept2, stages, whiskers
