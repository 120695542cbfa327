"""Gridded satellite frames on a regular lat/lon grid, slicing, and the QTIL file format.

Row 0 is the northern edge: cell ``(i, j)`` covers latitudes
``origin_lat - (i+1)*cell .. origin_lat - i*cell`` and longitudes
``origin_lon + j*cell .. origin_lon + (j+1)*cell``.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path

import numpy as np

from ..binio import Reader, atomic_write, pack_string
from ..channels import ALBEDO, BT, HIMAWARI8
from ..errors import BoundsError, DimensionError, FormatError
from ..sample import SLICE_HW
from .solar import to_utc

MAGIC = b"QTIL"
FORMAT_VERSION = 1
CELL_SIZE = 0.02


def default_channel_meta(channels=HIMAWARI8) -> tuple:
    return tuple({"id": c.id, "variable": c.variable} for c in channels)


@dataclass
class GridTile:
    timestamp: datetime
    values: np.ndarray
    origin_lat: float
    origin_lon: float
    cell_size: float = CELL_SIZE
    channels: tuple = default_channel_meta()

    def __post_init__(self):
        self.timestamp = to_utc(self.timestamp)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3:
            raise DimensionError(f"tile values must be C x Hg x Wg, got {self.values.shape}")
        if len(self.channels) != self.values.shape[0]:
            raise DimensionError(f"{len(self.channels)} channel entries for {self.values.shape[0]} channels")
        if not self.cell_size > 0:
            raise DimensionError(f"cell size must be positive, got {self.cell_size}")
        for ch in self.channels:
            if ch.get("variable") not in (ALBEDO, BT):
                raise FormatError(f"channel {ch.get('id')}: unknown variable {ch.get('variable')!r}")
        self.channels = tuple(dict(c) for c in self.channels)

    @property
    def shape(self) -> tuple:
        return self.values.shape

    def cell_index(self, latitude: float, longitude: float) -> tuple[int, int]:
        """Indices of the cell containing the point (no bounds check)."""
        i = math.floor((self.origin_lat - latitude) / self.cell_size)
        j = math.floor((longitude - self.origin_lon) / self.cell_size)
        return i, j

    def cell_center(self, i: int, j: int) -> tuple[float, float]:
        return (self.origin_lat - (i + 0.5) * self.cell_size, self.origin_lon + (j + 0.5) * self.cell_size)


def extract_slice(tile: GridTile, latitude: float, longitude: float, size: int = SLICE_HW) -> np.ndarray:
    """``C x size x size`` window whose center cell contains the point."""
    half = size // 2
    i, j = tile.cell_index(latitude, longitude)
    _, hg, wg = tile.shape
    if i - half < 0 or j - half < 0 or i + half >= hg or j + half >= wg:
        raise BoundsError(
            f"window around ({latitude}, {longitude}) -> cell ({i}, {j}) exceeds tile bounds {hg}x{wg}"
        )
    return tile.values[:, i - half:i + half + 1, j - half:j + half + 1].copy()


def tile_bytes(tile: GridTile) -> bytes:
    c, hg, wg = tile.shape
    meta = json.dumps(list(tile.channels), sort_keys=True, separators=(",", ":"))
    parts = [
        MAGIC,
        struct.pack("<I", FORMAT_VERSION),
        pack_string(tile.timestamp.isoformat()),
        struct.pack("<III", c, hg, wg),
        struct.pack("<ddd", tile.origin_lat, tile.origin_lon, tile.cell_size),
        pack_string(meta),
        np.ascontiguousarray(tile.values, dtype="<f4").tobytes(),
    ]
    return b"".join(parts)


def tile_from_bytes(data: bytes, what: str = "tile") -> GridTile:
    r = Reader(data, what)
    r.magic(MAGIC)
    (version,) = r.unpack("<I")
    if version != FORMAT_VERSION:
        raise FormatError(f"{what}: unsupported version {version} at offset 4")
    at = r.off
    try:
        ts = datetime.fromisoformat(r.string())
    except ValueError as exc:
        raise FormatError(f"{what}: bad timestamp at offset {at}: {exc}") from None
    c, hg, wg = r.unpack("<III")
    lat0, lon0, cell = r.unpack("<ddd")
    at = r.off
    try:
        meta = tuple(json.loads(r.string()))
    except ValueError as exc:
        raise FormatError(f"{what}: bad channel metadata at offset {at}: {exc}") from None
    values = np.frombuffer(r.take(4 * c * hg * wg), dtype="<f4").astype(np.float64).reshape(c, hg, wg)
    r.finish()
    try:
        return GridTile(ts, values, lat0, lon0, cell, meta)
    except DimensionError as exc:
        raise FormatError(f"{what}: {exc}") from None


def write_tile(tile: GridTile, path) -> None:
    atomic_write(path, tile_bytes(tile))


def read_tile(path) -> GridTile:
    return tile_from_bytes(Path(path).read_bytes(), what=str(path))


def read_tile_dir(directory) -> dict:
    """All ``*.qtil`` files in a directory keyed by frame timestamp."""
    out = {}
    for p in sorted(Path(directory).glob("*.qtil")):
        t = read_tile(p)
        if t.timestamp in out:
            raise FormatError(f"{p}: duplicate frame timestamp {t.timestamp.isoformat()}")
        out[t.timestamp] = t
    return out
