"""Himawari-8 AHI channel metadata (16 bands: albedo B01-B06, brightness temperature B07-B16)."""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigError

ALBEDO = "albedo"
BT = "bt"


@dataclass(frozen=True)
class Channel:
    id: str
    wavelength_um: float
    bandwidth_um: float
    variable: str
    resolution_km: float
    application: str

    @property
    def valid_range(self) -> tuple[float, float]:
        return (0.0, 100.0) if self.variable == ALBEDO else (150.0, 400.0)

    def to_dict(self) -> dict:
        return {"id": self.id, "variable": self.variable}


HIMAWARI8 = (
    Channel("B01", 0.455, 0.05, ALBEDO, 1.0, "Aerosol"),
    Channel("B02", 0.510, 0.02, ALBEDO, 1.0, "Aerosol"),
    Channel("B03", 0.645, 0.03, ALBEDO, 0.5, "Fog and low cloud"),
    Channel("B04", 0.860, 0.02, ALBEDO, 1.0, "Aerosol and vegetation"),
    Channel("B05", 1.610, 0.02, ALBEDO, 2.0, "Cloud phase"),
    Channel("B06", 2.260, 0.02, ALBEDO, 2.0, "Particle size"),
    Channel("B07", 3.850, 0.22, BT, 2.0, "Fog, low cloud, and forest fire"),
    Channel("B08", 6.250, 0.37, BT, 2.0, "Upper level moisture"),
    Channel("B09", 6.950, 0.12, BT, 2.0, "Mid-upper level moisture"),
    Channel("B10", 7.350, 0.17, BT, 2.0, "Mid-level moisture"),
    Channel("B11", 8.600, 0.32, BT, 2.0, "SO2 and cloud phase"),
    Channel("B12", 9.630, 0.18, BT, 2.0, "Ozone content"),
    Channel("B13", 10.45, 0.30, BT, 2.0, "Information of cloud top and cloud imagery"),
    Channel("B14", 11.20, 0.20, BT, 2.0, "Sea surface temperature and cloud imagery"),
    Channel("B15", 12.35, 0.30, BT, 2.0, "Sea surface temperature and cloud imagery"),
    Channel("B16", 13.30, 0.20, BT, 2.0, "Cloud top height"),
)

CHANNEL_IDS = tuple(c.id for c in HIMAWARI8)
ALL_CHANNELS = tuple(range(16))
# B07 and B11-B15
IR_SUBSET = (6, 10, 11, 12, 13, 14)


def channel_index(name) -> int:
    if isinstance(name, int):
        idx = name
    else:
        key = str(name).strip().upper()
        if key not in CHANNEL_IDS:
            raise ConfigError(f"unknown channel {name!r}")
        idx = CHANNEL_IDS.index(key)
    if not 0 <= idx < len(HIMAWARI8):
        raise ConfigError(f"channel index {idx} outside B01..B16")
    return idx


def parse_channels(spec) -> tuple[int, ...]:
    """Accept ``"B07,B11-B15"``, ``"all"``, or an iterable of names/indices."""
    if isinstance(spec, str):
        if spec.strip().lower() == "all":
            return ALL_CHANNELS
        out = []
        for part in spec.split(","):
            part = part.strip()
            if "-" in part:
                lo, hi = (channel_index(p) for p in part.split("-"))
                out.extend(range(lo, hi + 1))
            elif part:
                out.append(channel_index(part))
        return tuple(out)
    return tuple(channel_index(c) for c in spec)


def format_channels(indices) -> str:
    return ",".join(CHANNEL_IDS[i] for i in indices)
