"""Training instances and columnar collections of them."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator, Optional

import numpy as np

from .errors import DimensionError, InputError

SLICE_T = 6
SLICE_HW = 7


@dataclass
class Sample:
    """One hour of satellite slices plus its attributes and (optional) label.

    ``slices`` is ``(T, C, H, W)``; ``hour``/``day``/``month`` come from the
    label timestamp; ``target_ghi`` is the hourly-mean GHI in W/m2 or None.
    """

    slices: np.ndarray
    hour: int
    day: int
    month: int
    altitude: float = 0.0
    longitude: float = 0.0
    latitude: float = 0.0
    target_ghi: Optional[float] = None
    station_id: str = ""
    normalized: bool = False

    def __post_init__(self):
        self.slices = np.asarray(self.slices, dtype=np.float64)
        if self.slices.ndim != 4:
            raise DimensionError(f"slices must be T x C x H x W, got shape {self.slices.shape}")
        if self.target_ghi is not None:
            if not np.isfinite(self.target_ghi) or self.target_ghi < 0:
                raise InputError(f"target_ghi must be finite and >= 0, got {self.target_ghi}")
            self.target_ghi = float(self.target_ghi)

    def with_slices(self, slices, **changes) -> "Sample":
        return replace(self, slices=slices, **changes)


@dataclass
class Dataset:
    """Columnar sample store: ``slices`` is ``(N, T, C, H, W)``; targets use NaN for absent."""

    slices: np.ndarray
    hour: np.ndarray
    day: np.ndarray
    month: np.ndarray
    altitude: np.ndarray
    longitude: np.ndarray
    latitude: np.ndarray
    target: np.ndarray
    station_id: list = field(default_factory=list)
    normalized: bool = False

    def __post_init__(self):
        self.slices = np.asarray(self.slices, dtype=np.float64)
        if self.slices.ndim != 5:
            raise DimensionError(f"dataset slices must be N x T x C x H x W, got {self.slices.shape}")
        n = self.slices.shape[0]
        for name in ("hour", "day", "month"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.int64).reshape(n))
        for name in ("altitude", "longitude", "latitude", "target"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64).reshape(n))
        if not self.station_id:
            self.station_id = [""] * n
        self.station_id = [str(s) for s in self.station_id]
        if len(self.station_id) != n:
            raise DimensionError(f"{len(self.station_id)} station ids for {n} samples")

    def __len__(self) -> int:
        return self.slices.shape[0]

    @property
    def shape(self) -> tuple:
        return self.slices.shape

    @property
    def has_targets(self) -> bool:
        return len(self) > 0 and bool(np.all(np.isfinite(self.target)))

    def __getitem__(self, i: int) -> Sample:
        t = self.target[i]
        return Sample(
            slices=self.slices[i],
            hour=int(self.hour[i]),
            day=int(self.day[i]),
            month=int(self.month[i]),
            altitude=float(self.altitude[i]),
            longitude=float(self.longitude[i]),
            latitude=float(self.latitude[i]),
            target_ghi=None if np.isnan(t) else float(t),
            station_id=self.station_id[i],
            normalized=self.normalized,
        )

    def __iter__(self) -> Iterator[Sample]:
        for i in range(len(self)):
            yield self[i]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(
            slices=self.slices[idx],
            hour=self.hour[idx],
            day=self.day[idx],
            month=self.month[idx],
            altitude=self.altitude[idx],
            longitude=self.longitude[idx],
            latitude=self.latitude[idx],
            target=self.target[idx],
            station_id=[self.station_id[i] for i in idx],
            normalized=self.normalized,
        )

    def with_slices(self, slices, normalized: bool) -> "Dataset":
        return replace(self, slices=slices, normalized=normalized, station_id=list(self.station_id))

    @classmethod
    def from_samples(cls, samples: Iterable[Sample]) -> "Dataset":
        samples = list(samples)
        if not samples:
            raise InputError("cannot build a dataset from zero samples")
        flags = {s.normalized for s in samples}
        if len(flags) != 1:
            raise InputError("cannot mix normalized and raw samples")
        shapes = {s.slices.shape for s in samples}
        if len(shapes) != 1:
            raise DimensionError(f"samples disagree on slice shape: {sorted(shapes)}")
        return cls(
            slices=np.stack([s.slices for s in samples]),
            hour=[s.hour for s in samples],
            day=[s.day for s in samples],
            month=[s.month for s in samples],
            altitude=[s.altitude for s in samples],
            longitude=[s.longitude for s in samples],
            latitude=[s.latitude for s in samples],
            target=[np.nan if s.target_ghi is None else s.target_ghi for s in samples],
            station_id=[s.station_id for s in samples],
            normalized=flags.pop(),
        )

    @classmethod
    def concat(cls, parts: Iterable["Dataset"]) -> "Dataset":
        parts = list(parts)
        return cls(
            slices=np.concatenate([p.slices for p in parts]),
            hour=np.concatenate([p.hour for p in parts]),
            day=np.concatenate([p.day for p in parts]),
            month=np.concatenate([p.month for p in parts]),
            altitude=np.concatenate([p.altitude for p in parts]),
            longitude=np.concatenate([p.longitude for p in parts]),
            latitude=np.concatenate([p.latitude for p in parts]),
            target=np.concatenate([p.target for p in parts]),
            station_id=[s for p in parts for s in p.station_id],
            normalized=parts[0].normalized,
        )
