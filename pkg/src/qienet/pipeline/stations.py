"""Hourly ground station records and their CSV form."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path

from ..errors import FormatError, InputError
from .solar import to_utc

CSV_HEADER = ("station_id", "lat", "lon", "alt", "timestamp_utc", "ghi_wm2")
DOMAIN_LON = (102.0, 122.0)
DOMAIN_LAT = (18.0, 30.0)


def parse_timestamp(text: str) -> datetime:
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    return to_utc(datetime.fromisoformat(text))


def format_timestamp(ts: datetime) -> str:
    return to_utc(ts).strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass(frozen=True)
class StationRecord:
    station_id: str
    latitude: float
    longitude: float
    altitude: float
    timestamp: datetime
    ghi: float

    def __post_init__(self):
        ts = to_utc(self.timestamp).replace(minute=0, second=0, microsecond=0)
        object.__setattr__(self, "timestamp", ts)
        if not math.isfinite(self.ghi) or self.ghi < 0:
            raise InputError(f"station {self.station_id}: ghi must be finite and >= 0, got {self.ghi}")
        if not -90.0 <= self.latitude <= 90.0:
            raise InputError(f"station {self.station_id}: latitude {self.latitude} out of range")

    @property
    def in_domain(self) -> bool:
        return DOMAIN_LON[0] <= self.longitude <= DOMAIN_LON[1] and DOMAIN_LAT[0] <= self.latitude <= DOMAIN_LAT[1]


def read_station_csv(path) -> list[StationRecord]:
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CSV_HEADER:
            raise FormatError(f"{path}: line 1: expected header {','.join(CSV_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(CSV_HEADER):
                raise FormatError(f"{path}: line {lineno}: expected {len(CSV_HEADER)} fields, got {len(row)}")
            try:
                records.append(
                    StationRecord(
                        station_id=row[0].strip(),
                        latitude=float(row[1]),
                        longitude=float(row[2]),
                        altitude=float(row[3]),
                        timestamp=parse_timestamp(row[4]),
                        ghi=float(row[5]),
                    )
                )
            except (ValueError, InputError) as exc:
                raise FormatError(f"{path}: line {lineno}: {exc}") from None
    return records


def write_station_csv(records, path) -> None:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in records:
            w.writerow([r.station_id, repr(r.latitude), repr(r.longitude), repr(r.altitude),
                        format_timestamp(r.timestamp), repr(r.ghi)])
