"""Grid-wide hourly GHI estimation and integration into energy maps.

Hourly grids hold W/m2; integrated grids hold kWh/m2. Cells within three
cells of the tile edge have no full 7x7 context and carry NaN internally,
written as -9999 in ESRI ASCII files.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from . import model as qm
from .binio import atomic_write
from .errors import ConfigError, CoverageError, DimensionError, FormatError, GapError, InputError
from .pipeline.dataset import frame_times
from .pipeline.solar import to_utc
from .pipeline.tiles import CELL_SIZE, GridTile
from .sample import SLICE_HW, Dataset

NODATA = -9999.0
HOURLY = "W/m2"
ENERGY = "kWh/m2"
SEASONS = {"spring": (12, 1, 2), "summer": (3, 4, 5), "autumn": (6, 7, 8), "winter": (9, 10, 11)}
_STAMP = re.compile(r"(\d{8}T\d{2})")


@dataclass
class GhiGrid:
    values: np.ndarray
    origin_lat: float
    origin_lon: float
    cell_size: float = CELL_SIZE
    label: str = ""
    units: str = HOURLY
    timestamp: Optional[datetime] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DimensionError(f"grid values must be 2-D, got {self.values.shape}")
        if np.any(self.values[np.isfinite(self.values)] < 0):
            raise InputError("grid values must be non-negative")
        if self.timestamp is not None:
            self.timestamp = to_utc(self.timestamp)

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.values)

    def same_geometry(self, other: "GhiGrid") -> bool:
        return (self.shape == other.shape and self.origin_lat == other.origin_lat
                and self.origin_lon == other.origin_lon and self.cell_size == other.cell_size)


def hourly_name(ts: datetime, prefix: str = "ghi") -> str:
    return f"{prefix}_{to_utc(ts):%Y%m%dT%H}.asc"


# -- prediction ---------------------------------------------------------------------


def _check_frames(tiles) -> list:
    tiles = list(tiles)
    if not tiles:
        raise GapError("no frames given")
    expected = frame_times(tiles[0].timestamp, len(tiles))
    if tiles[0].timestamp.minute != 0:
        raise GapError(f"first frame {tiles[0].timestamp.isoformat()} is not at the top of the hour")
    for t, e in zip(tiles, expected):
        if t.timestamp != e:
            raise GapError(f"expected frame {e.isoformat()}, got {t.timestamp.isoformat()}")
    ref = tiles[0]
    for t in tiles[1:]:
        if (t.values.shape != ref.values.shape or t.origin_lat != ref.origin_lat
                or t.origin_lon != ref.origin_lon or t.cell_size != ref.cell_size):
            raise DimensionError(f"frame {t.timestamp.isoformat()} has different grid geometry")
    return tiles


def predict_grid(tiles, ckpt: qm.Checkpoint, dem: Optional[np.ndarray] = None) -> GhiGrid:
    """Hourly GHI for every interior cell of the frames' grid.

    Each cell is evaluated on its own 7x7 window with the cell center as its
    location and the label hour's time fields, exactly as :func:`qienet.model.forward`
    would on that sample. Rows are batched; results do not depend on batching.
    """
    tiles = _check_frames(tiles)
    cfg = ckpt.config
    c, hg, wg = tiles[0].values.shape
    if c != cfg.input_channels:
        raise ConfigError(f"frames carry {c} channels, checkpoint expects {cfg.input_channels}")
    if len(tiles) != cfg.stack.T:
        raise ConfigError(f"{len(tiles)} frames given, checkpoint expects T={cfg.stack.T}")
    if dem is not None and np.shape(dem) != (hg, wg):
        raise DimensionError(f"DEM shape {np.shape(dem)} != grid {(hg, wg)}")
    half = SLICE_HW // 2
    out = np.full((hg, wg), np.nan)
    if hg < SLICE_HW or wg < SLICE_HW:
        return _grid(out, tiles[0])
    stack = np.stack([t.values for t in tiles])  # T, C, Hg, Wg
    win = np.lib.stride_tricks.sliding_window_view(stack, (SLICE_HW, SLICE_HW), axis=(2, 3))
    ts = tiles[0].timestamp
    ref = tiles[0]
    ncols = wg - 2 * half
    cols = np.arange(half, wg - half)
    lon = ref.origin_lon + (cols + 0.5) * ref.cell_size
    for i in range(half, hg - half):
        slices = np.ascontiguousarray(np.moveaxis(win[:, :, i - half], 2, 0))  # cells, T, C, 7, 7
        lat = ref.origin_lat - (i + 0.5) * ref.cell_size
        alt = np.zeros(ncols) if dem is None else np.asarray(dem, dtype=np.float64)[i, half:wg - half]
        row = Dataset(slices, np.full(ncols, ts.hour), np.full(ncols, ts.day), np.full(ncols, ts.month),
                      alt, lon, np.full(ncols, lat), np.full(ncols, np.nan))
        out[i, half:wg - half] = qm.predict(row, cfg, ckpt.params, ckpt.normalizer)
    return _grid(out, ref)


def _grid(values, ref: GridTile) -> GhiGrid:
    ts = ref.timestamp
    return GhiGrid(values, ref.origin_lat, ref.origin_lon, ref.cell_size, label=f"{ts:%Y%m%dT%H}",
                   units=HOURLY, timestamp=ts)


# -- integration ----------------------------------------------------------------------


@dataclass(frozen=True)
class Period:
    """A set of calendar months, e.g. one month, a season, or a year."""

    label: str
    months: tuple  # ((year, month), ...) in time order

    @classmethod
    def month(cls, year: int, month: int) -> "Period":
        if not 1 <= month <= 12:
            raise ConfigError(f"month must be 1..12, got {month}")
        return cls(f"{year:04d}-{month:02d}", ((year, month),))

    @classmethod
    def year(cls, year: int, start_month: int = 1) -> "Period":
        """Twelve months starting at ``start_month``; with 12, December of the previous year opens it."""
        if not 1 <= start_month <= 12:
            raise ConfigError(f"start_month must be 1..12, got {start_month}")
        first = year if start_month == 1 else year - 1
        months = tuple(_add_months(first, start_month, k) for k in range(12))
        label = f"{year:04d}" if start_month == 1 else f"{year:04d}-from-{first:04d}-{start_month:02d}"
        return cls(label, months)

    @classmethod
    def season(cls, name: str, year: int) -> "Period":
        """Three-month season; spring is December of ``year - 1`` through February of ``year``."""
        key = name.lower()
        if key not in SEASONS:
            raise ConfigError(f"unknown season {name!r}; expected one of {', '.join(SEASONS)}")
        months = tuple((year - 1 if m == 12 else year, m) for m in SEASONS[key])
        return cls(f"{year:04d}-{key}", months)

    def hours(self) -> list[datetime]:
        out = []
        for y, m in self.months:
            start = datetime(y, m, 1)
            ny, nm = _add_months(y, m, 1)
            n = int((datetime(ny, nm, 1) - start).total_seconds() // 3600)
            out.extend(start + timedelta(hours=h) for h in range(n))
        return out

    def contains(self, ts: datetime) -> bool:
        ts = to_utc(ts)
        return (ts.year, ts.month) in self.months


def _add_months(year: int, month: int, k: int) -> tuple[int, int]:
    idx = year * 12 + (month - 1) + k
    return idx // 12, idx % 12 + 1


@dataclass
class IntegrationReport:
    period: str
    expected_hours: int
    used_hours: int
    missing: list = field(default_factory=list)
    ignored: int = 0

    def to_dict(self) -> dict:
        return {
            "period": self.period,
            "expected_hours": self.expected_hours,
            "used_hours": self.used_hours,
            "missing_hours": len(self.missing),
            "missing": [t.isoformat() for t in self.missing[:100]],
            "ignored_outside_period": self.ignored,
        }


def integrate_energy(grids: Iterable[GhiGrid], period: Period, max_missing_hours: int = 0):
    """Rectangle-rule energy (kWh/m2) over ``period`` from hourly W/m2 grids.

    Grids are consumed one at a time. Hours outside the period are ignored;
    missing hours count as zero only when there are at most
    ``max_missing_hours`` of them. A cell that is NaN in any grid is NaN in
    the result. Returns ``(GhiGrid, IntegrationReport)``.
    """
    expected = period.hours()
    wanted = set(expected)
    seen = set()
    acc = None
    ref = None
    ignored = 0
    for g in grids:
        if g.timestamp is None:
            raise InputError(f"grid {g.label!r} has no timestamp")
        if g.units != HOURLY:
            raise InputError(f"grid {g.label!r} holds {g.units}, expected hourly {HOURLY}")
        ts = g.timestamp.replace(minute=0, second=0, microsecond=0)
        if ts not in wanted:
            ignored += 1
            continue
        if ts in seen:
            raise InputError(f"duplicate hourly grid for {ts.isoformat()}")
        if ref is None:
            ref, acc = g, np.zeros(g.shape)
        elif not ref.same_geometry(g):
            raise DimensionError(f"grid {ts.isoformat()} differs in geometry from {ref.timestamp.isoformat()}")
        seen.add(ts)
        acc += g.values
    missing = [t for t in expected if t not in seen]
    report = IntegrationReport(period.label, len(expected), len(seen), missing, ignored)
    if len(missing) > max_missing_hours:
        raise CoverageError(
            f"{period.label}: {len(missing)} of {len(expected)} hours missing "
            f"(policy allows {max_missing_hours}); first {missing[0].isoformat()}",
            missing=missing,
        )
    if acc is None:
        raise CoverageError(f"{period.label}: no hourly grids inside the period", missing=missing)
    out = GhiGrid(acc / 1000.0, ref.origin_lat, ref.origin_lon, ref.cell_size, label=period.label, units=ENERGY)
    return out, report


def sum_grids(grids: Iterable[GhiGrid], label: str = "") -> GhiGrid:
    """Cell-wise sum of same-unit grids on one geometry."""
    grids = list(grids)
    if not grids:
        raise InputError("nothing to sum")
    ref = grids[0]
    for g in grids[1:]:
        if not ref.same_geometry(g) or g.units != ref.units:
            raise DimensionError("grids differ in geometry or units")
    total = np.sum([g.values for g in grids], axis=0)
    return GhiGrid(total, ref.origin_lat, ref.origin_lon, ref.cell_size, label=label, units=ref.units)


# -- ESRI ASCII grid -----------------------------------------------------------------

_HEADER = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value")


def grid_text(g: GhiGrid) -> str:
    nrows, ncols = g.shape
    lines = [
        f"ncols {ncols}",
        f"nrows {nrows}",
        f"xllcorner {g.origin_lon!r}",
        f"yllcorner {g.origin_lat - nrows * g.cell_size!r}",
        f"cellsize {g.cell_size!r}",
        f"NODATA_value {NODATA:g}",
    ]
    v = np.where(np.isfinite(g.values), g.values, NODATA)
    for row in v:
        lines.append(" ".join("%.6g" % x for x in row))
    return "\n".join(lines) + "\n"


def write_grid(g: GhiGrid, path) -> None:
    atomic_write(path, grid_text(g).encode("ascii"))


def parse_grid(text: str, name: str = "grid") -> GhiGrid:
    lines = text.splitlines()
    head = {}
    for k, key in enumerate(_HEADER):
        if k >= len(lines):
            raise FormatError(f"{name}: line {k + 1}: missing {key} header")
        parts = lines[k].split()
        if len(parts) != 2 or parts[0].lower() != key:
            raise FormatError(f"{name}: line {k + 1}: expected '{key} <value>', got {lines[k]!r}")
        try:
            head[key] = float(parts[1])
        except ValueError:
            raise FormatError(f"{name}: line {k + 1}: bad {key} value {parts[1]!r}") from None
    ncols, nrows = int(head["ncols"]), int(head["nrows"])
    if ncols != head["ncols"] or nrows != head["nrows"] or ncols < 1 or nrows < 1:
        raise FormatError(f"{name}: lines 1-2: ncols/nrows must be positive integers")
    if not head["cellsize"] > 0:
        raise FormatError(f"{name}: line 5: cellsize must be positive")
    body = [ln for ln in lines[len(_HEADER):]]
    while body and not body[-1].strip():
        body.pop()
    if len(body) != nrows:
        raise FormatError(f"{name}: expected {nrows} data rows, found {len(body)}")
    values = np.empty((nrows, ncols))
    for r, ln in enumerate(body):
        lineno = r + len(_HEADER) + 1
        parts = ln.split()
        if len(parts) != ncols:
            raise FormatError(f"{name}: line {lineno}: expected {ncols} values, got {len(parts)}")
        try:
            values[r] = [float(p) for p in parts]
        except ValueError:
            raise FormatError(f"{name}: line {lineno}: non-numeric value") from None
    values[values == head["nodata_value"]] = np.nan
    cell = head["cellsize"]
    origin_lat = head["yllcorner"] + nrows * cell
    m = _STAMP.search(name)
    ts = datetime.strptime(m.group(1), "%Y%m%dT%H") if m else None
    try:
        return GhiGrid(values, origin_lat, head["xllcorner"], cell, label=Path(name).stem,
                       units=HOURLY if ts is not None else ENERGY, timestamp=ts)
    except InputError as exc:
        raise FormatError(f"{name}: {exc}") from None


def read_grid(path) -> GhiGrid:
    path = Path(path)
    return parse_grid(path.read_text(encoding="ascii"), name=path.name)


def domain_header(lon=(102.0, 122.0), lat=(18.0, 30.0), cell: float = CELL_SIZE) -> dict:
    """Column/row counts for a lon/lat box at the given cell size."""
    return {
        "ncols": int(round((lon[1] - lon[0]) / cell)),
        "nrows": int(round((lat[1] - lat[0]) / cell)),
        "xllcorner": lon[0],
        "yllcorner": lat[0],
        "cellsize": cell,
    }

