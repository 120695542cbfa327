"""Dataset construction from station records and satellite frames, faulty-slice
screening, per-channel statistics, PCC channel selection, and the QDST format."""

from __future__ import annotations

import struct
from dataclasses import asdict, dataclass, field
from datetime import datetime, timedelta
from pathlib import Path
from typing import Mapping, Optional

import numpy as np

from ..binio import Reader, atomic_write
from ..channels import CHANNEL_IDS, HIMAWARI8, channel_index
from ..errors import BoundsError, DimensionError, FormatError, GapError, InputError, UndefinedMetricError
from ..metrics import pearson_r
from ..sample import SLICE_T, Dataset, Sample
from .stations import StationRecord
from .tiles import extract_slice

FRAME_STEP = timedelta(minutes=10)
STAT_NAMES = ("max", "min", "mean", "median")
DEFAULT_THRESHOLD = 0.24


def frame_times(label: datetime, t: int = SLICE_T) -> list[datetime]:
    """Frame timestamps :00, :10, ... of the labeled hour."""
    start = label.replace(minute=0, second=0, microsecond=0)
    return [start + k * FRAME_STEP for k in range(t)]


def build_sample(tiles, station: StationRecord, with_target: bool = True) -> Sample:
    """Stack the six frames of the station's hour into a ``T x C x 7 x 7`` sample."""
    expected = frame_times(station.timestamp)
    got = [t.timestamp for t in tiles]
    missing = [e for e in expected if e not in got]
    if missing:
        raise GapError(f"missing frame {missing[0].isoformat()} for hour {station.timestamp.isoformat()}")
    if got != expected:
        raise GapError(f"frames for hour {station.timestamp.isoformat()} are out of order or duplicated: "
                       + ", ".join(g.isoformat() for g in got))
    if len({t.values.shape[0] for t in tiles}) != 1:
        raise DimensionError("frames disagree on channel count")
    slices = np.stack([extract_slice(t, station.latitude, station.longitude) for t in tiles])
    ts = station.timestamp
    return Sample(
        slices=slices,
        hour=ts.hour,
        day=ts.day,
        month=ts.month,
        altitude=station.altitude,
        longitude=station.longitude,
        latitude=station.latitude,
        target_ghi=station.ghi if with_target else None,
        station_id=station.station_id,
    )


@dataclass(frozen=True)
class FaultCriteria:
    albedo_range: tuple = (0.0, 100.0)
    bt_range: tuple = (150.0, 400.0)
    sentinels: tuple = (-999.0, -9999.0, 32767.0, 65535.0)


def fault_reasons(s: Sample, criteria: FaultCriteria = FaultCriteria(), channels=HIMAWARI8) -> list[str]:
    """Human-readable reasons a sample is faulty (empty list when clean)."""
    x = s.slices
    if x.shape[1] != len(channels):
        raise DimensionError(f"sample has {x.shape[1]} channels, metadata lists {len(channels)}")
    reasons = []
    for c, ch in enumerate(channels):
        v = x[:, c]
        if not np.all(np.isfinite(v)):
            reasons.append(f"{ch.id}: non-finite values")
            continue
        lo, hi = criteria.albedo_range if ch.variable == "albedo" else criteria.bt_range
        if v.min() < lo or v.max() > hi:
            reasons.append(f"{ch.id}: values outside [{lo}, {hi}]")
        if v.min() == v.max() and float(v.flat[0]) in criteria.sentinels:
            reasons.append(f"{ch.id}: constant at sentinel {float(v.flat[0])}")
    return reasons


def detect_faulty_sample(s: Sample, criteria: FaultCriteria = FaultCriteria(), channels=HIMAWARI8) -> bool:
    return bool(fault_reasons(s, criteria, channels))


@dataclass
class BuildReport:
    records: int = 0
    built: int = 0
    daylight_skipped: int = 0
    missing_frames: int = 0
    out_of_bounds: int = 0
    faulty: int = 0
    problems: list = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["problems"] = d["problems"][:50]
        return d


def build_dataset(records, tiles: Mapping[datetime, object], *, daylight_only: bool = False,
                  criteria: FaultCriteria = FaultCriteria(), channels=HIMAWARI8):
    """Samples for every record whose frames exist, ordered by timestamp then station.

    Records without a complete frame set or whose window leaves the tile are
    skipped and counted; faulty samples are dropped. Returns ``(Dataset, BuildReport)``.
    """
    rep = BuildReport()
    samples = []
    for r in sorted(records, key=lambda r: (r.timestamp, r.station_id)):
        rep.records += 1
        if daylight_only and r.ghi <= 0.0:
            rep.daylight_skipped += 1
            continue
        frames = [tiles.get(t) for t in frame_times(r.timestamp)]
        try:
            if any(f is None for f in frames):
                missing = frame_times(r.timestamp)[[f is None for f in frames].index(True)]
                raise GapError(f"missing frame {missing.isoformat()}")
            s = build_sample(frames, r)
        except GapError as exc:
            rep.missing_frames += 1
            rep.problems.append(f"{r.station_id} {r.timestamp.isoformat()}: {exc}")
            continue
        except BoundsError as exc:
            rep.out_of_bounds += 1
            rep.problems.append(f"{r.station_id} {r.timestamp.isoformat()}: {exc}")
            continue
        reasons = fault_reasons(s, criteria, channels)
        if reasons:
            rep.faulty += 1
            rep.problems.append(f"{r.station_id} {r.timestamp.isoformat()}: faulty ({'; '.join(reasons)})")
            continue
        samples.append(s)
    rep.built = len(samples)
    if not samples:
        raise InputError("no samples could be built: " + "; ".join(rep.problems[:3]))
    return Dataset.from_samples(samples), rep


def drop_faulty(ds: Dataset, criteria: FaultCriteria = FaultCriteria(), channels=HIMAWARI8):
    """Return ``(clean dataset, number dropped)``."""
    keep = [i for i in range(len(ds)) if not detect_faulty_sample(ds[i], criteria, channels)]
    return ds.subset(keep), len(ds) - len(keep)


# -- statistics and selection -----------------------------------------------


@dataclass
class ChannelStats:
    max: np.ndarray
    min: np.ndarray
    mean: np.ndarray
    median: np.ndarray

    def as_array(self) -> np.ndarray:
        return np.stack([self.max, self.min, self.mean, self.median], axis=-1)

    def to_dict(self, names=CHANNEL_IDS) -> dict:
        return {n: {k: float(getattr(self, k)[c]) for k in STAT_NAMES} for c, n in enumerate(names)}


def _stats(x: np.ndarray, axes) -> ChannelStats:
    return ChannelStats(x.max(axis=axes), x.min(axis=axes), x.mean(axis=axes), np.median(x, axis=axes))


def channel_stats(data: Dataset, timestep: Optional[int] = None):
    """Per-sample stats ``(N, C)`` per field and dataset-level stats ``(C,)``.

    With ``timestep`` set, each sample's statistics use only that frame.
    """
    if len(data) == 0:
        raise InputError("channel_stats needs a nonempty dataset")
    x = data.slices if timestep is None else data.slices[:, [timestep]]
    per_sample = _stats(x, (1, 3, 4))
    overall = _stats(np.moveaxis(x, 2, 0).reshape(x.shape[2], -1), 1)
    return per_sample, overall


@dataclass
class PccResult:
    table: dict
    zero_variance: dict
    selected: tuple
    threshold: float

    def to_dict(self, names=CHANNEL_IDS) -> dict:
        return {
            "threshold": self.threshold,
            "selected": [names[i] for i in self.selected],
            "pcc": {names[c]: {k: self.table[k][c] for k in STAT_NAMES} for c in range(len(self.table["mean"]))},
            "zero_variance": {names[c]: [k for k in STAT_NAMES if self.zero_variance[k][c]]
                              for c in range(len(self.table["mean"]))
                              if any(self.zero_variance[k][c] for k in STAT_NAMES)},
        }


def select_channels(pcc_mean, threshold: float = DEFAULT_THRESHOLD) -> tuple[int, ...]:
    """Channels whose ``|PCC_mean| >= threshold``; accepts a sequence or a name->value mapping."""
    if isinstance(pcc_mean, Mapping):
        items = sorted((channel_index(k), float(v)) for k, v in pcc_mean.items())
    else:
        items = list(enumerate(float(v) for v in pcc_mean))
    return tuple(c for c, v in items if abs(v) >= threshold)


def pcc_select(data: Dataset, threshold: float = DEFAULT_THRESHOLD, timestep: int = -1) -> PccResult:
    if not data.has_targets:
        raise InputError("pcc_select needs a dataset with targets")
    per_sample, _ = channel_stats(data, timestep)
    y = data.target
    table, flags = {}, {}
    for k in STAT_NAMES:
        vals = getattr(per_sample, k)
        table[k], flags[k] = [], []
        for c in range(vals.shape[1]):
            try:
                table[k].append(pearson_r(vals[:, c], y))
                flags[k].append(False)
            except UndefinedMetricError:
                table[k].append(0.0)
                flags[k].append(True)
    return PccResult(table, flags, select_channels(table["mean"], threshold), threshold)


# -- QDST file format --------------------------------------------------------

MAGIC = b"QDST"
FORMAT_VERSION = 1
_ATTR = struct.Struct("<iiiddd")


def dataset_bytes(ds: Dataset) -> bytes:
    if ds.normalized:
        raise InputError("only raw (unnormalized) datasets are written to disk")
    n, t, c, h, w = ds.shape
    parts = [MAGIC, struct.pack("<IQIIII", FORMAT_VERSION, n, t, c, h, w)]
    payload = np.ascontiguousarray(ds.slices, dtype="<f4")
    for i in range(n):
        sid = ds.station_id[i].encode("utf-8")
        if len(sid) > 0xFFFF:
            raise InputError(f"station id too long: {ds.station_id[i][:20]}...")
        parts.append(struct.pack("<H", len(sid)) + sid)
        parts.append(_ATTR.pack(int(ds.hour[i]), int(ds.day[i]), int(ds.month[i]),
                                float(ds.altitude[i]), float(ds.longitude[i]), float(ds.latitude[i])))
        parts.append(payload[i].tobytes())
        parts.append(struct.pack("<d", float(ds.target[i])))
    return b"".join(parts)


def dataset_from_bytes(data: bytes, what: str = "dataset") -> Dataset:
    r = Reader(data, what)
    r.magic(MAGIC)
    version, n, t, c, h, w = r.unpack("<IQIIII")
    if version != FORMAT_VERSION:
        raise FormatError(f"{what}: unsupported version {version} at offset 4")
    per = t * c * h * w
    if n * (per * 4 + _ATTR.size + 10) > len(data):
        raise FormatError(f"{what}: header claims {n} samples but file holds {len(data)} bytes")
    slices = np.empty((n, t, c, h, w))
    attrs = np.empty((n, 6))
    target = np.empty(n)
    ids = []
    for i in range(n):
        (k,) = r.unpack("<H")
        at = r.off
        try:
            ids.append(r.take(k).decode("utf-8"))
        except UnicodeDecodeError:
            raise FormatError(f"{what}: invalid station id at offset {at}") from None
        attrs[i] = r.unpack(_ATTR.format)
        slices[i] = np.frombuffer(r.take(4 * per), dtype="<f4").reshape(t, c, h, w)
        (target[i],) = r.unpack("<d")
    r.finish()
    try:
        return Dataset(slices, attrs[:, 0], attrs[:, 1], attrs[:, 2], attrs[:, 3], attrs[:, 4], attrs[:, 5],
                       target, ids)
    except (InputError, DimensionError) as exc:
        raise FormatError(f"{what}: {exc}") from None


def write_dataset(ds: Dataset, path) -> None:
    atomic_write(path, dataset_bytes(ds))


def read_dataset(path) -> Dataset:
    return dataset_from_bytes(Path(path).read_bytes(), what=str(path))
