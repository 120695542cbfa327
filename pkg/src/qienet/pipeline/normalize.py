"""Min-max normalization fitted on a training split only."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from ..errors import DimensionError, InputError
from ..sample import Dataset

# Study window 102-122 E, 18-30 N; used when no fitted stats are available.
DEFAULT_ALTITUDE_RANGE = (0.0, 4000.0)
DEFAULT_LONGITUDE_RANGE = (102.0, 122.0)
DEFAULT_LATITUDE_RANGE = (18.0, 30.0)


@dataclass
class Normalizer:
    channel_min: np.ndarray
    channel_max: np.ndarray
    altitude_range: tuple = DEFAULT_ALTITUDE_RANGE
    longitude_range: tuple = DEFAULT_LONGITUDE_RANGE
    latitude_range: tuple = DEFAULT_LATITUDE_RANGE
    target_max: float = 1.0
    degenerate: list = field(default_factory=list)

    def __post_init__(self):
        self.channel_min = np.asarray(self.channel_min, dtype=np.float64)
        self.channel_max = np.asarray(self.channel_max, dtype=np.float64)
        if not self.degenerate:
            self.degenerate = [bool(hi <= lo) for lo, hi in zip(self.channel_min, self.channel_max)]
        self.altitude_range = tuple(float(v) for v in self.altitude_range)
        self.longitude_range = tuple(float(v) for v in self.longitude_range)
        self.latitude_range = tuple(float(v) for v in self.latitude_range)
        self.target_max = float(self.target_max)

    @property
    def channels(self) -> int:
        return self.channel_min.shape[0]

    def span(self) -> np.ndarray:
        span = self.channel_max - self.channel_min
        return np.where(np.asarray(self.degenerate), 1.0, span)

    def scale_slices(self, slices: np.ndarray) -> np.ndarray:
        """Normalize an array whose channel axis is third from last."""
        if slices.shape[-3] != self.channels:
            raise DimensionError(f"normalizer fitted on {self.channels} channels, got {slices.shape[-3]}")
        lo = self.channel_min[:, None, None]
        out = (slices - lo) / self.span()[:, None, None]
        dead = np.asarray(self.degenerate)
        if dead.any():
            out[..., dead, :, :] = 0.0
        return out

    def unscale_slices(self, slices: np.ndarray) -> np.ndarray:
        out = slices * self.span()[:, None, None] + self.channel_min[:, None, None]
        dead = np.asarray(self.degenerate)
        if dead.any():
            out[..., dead, :, :] = self.channel_min[dead][:, None, None]
        return out

    def to_dict(self) -> dict:
        return {
            "channel_min": self.channel_min.tolist(),
            "channel_max": self.channel_max.tolist(),
            "altitude_range": list(self.altitude_range),
            "longitude_range": list(self.longitude_range),
            "latitude_range": list(self.latitude_range),
            "target_max": self.target_max,
            "degenerate": list(self.degenerate),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Normalizer":
        return cls(**d)


def _range(values: np.ndarray, default: tuple) -> tuple:
    values = values[np.isfinite(values)]
    if values.size == 0:
        return default
    return float(values.min()), float(values.max())


def fit_normalizer(train: Dataset) -> Normalizer:
    """Per-channel min/max, attribute ranges and target scale over ``train``."""
    if len(train) == 0:
        raise InputError("cannot fit a normalizer on an empty split")
    if train.normalized:
        raise InputError("normalizer must be fitted on raw (unnormalized) data")
    axes = (0, 1, 3, 4)
    cmin = np.nanmin(train.slices, axis=axes)
    cmax = np.nanmax(train.slices, axis=axes)
    degenerate = [bool(hi <= lo) for lo, hi in zip(cmin, cmax)]
    if any(degenerate):
        warnings.warn(
            "degenerate channels (max == min) scale to 0: "
            + ", ".join(str(i) for i, d in enumerate(degenerate) if d),
            RuntimeWarning,
            stacklevel=2,
        )
    targets = train.target[np.isfinite(train.target)]
    tmax = float(targets.max()) if targets.size and targets.max() > 0 else 1.0
    return Normalizer(
        channel_min=cmin,
        channel_max=cmax,
        altitude_range=_range(train.altitude, DEFAULT_ALTITUDE_RANGE),
        longitude_range=_range(train.longitude, DEFAULT_LONGITUDE_RANGE),
        latitude_range=_range(train.latitude, DEFAULT_LATITUDE_RANGE),
        target_max=tmax,
        degenerate=degenerate,
    )


def apply_normalizer(x, norm: Normalizer):
    """Return a normalized copy of a Sample or Dataset; already-normalized input is returned as is."""
    if x.normalized:
        return x
    return x.with_slices(norm.scale_slices(x.slices), normalized=True)


def denormalize(x, norm: Normalizer):
    if not x.normalized:
        return x
    return x.with_slices(norm.unscale_slices(x.slices), normalized=False)


def minmax(value, bounds: tuple):
    lo, hi = bounds
    if hi <= lo:
        return np.zeros_like(np.asarray(value, dtype=np.float64))
    return (np.asarray(value, dtype=np.float64) - lo) / (hi - lo)


