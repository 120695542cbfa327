"""Synthetic slice sequences with a known GHI generator.

target = clear_sky(hour, day, latitude) * attenuation(cloud) + noise, where
clear_sky is 0.75 of the hourly extraterrestrial GHI at local solar time and
attenuation = 1 - 0.75 * cloud cover over the station during the hour. All 16
channels are rendered from the same cloud field: albedo rises and brightness
temperature drops with cloud fraction.

In spatial mode each sample carries a drifting Gaussian cloud blob, so the
station's cover depends on where the blob sits relative to the center rather
than on the slice average. Otherwise the cloud is spatially uniform.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from datetime import date, timedelta

import numpy as np

from ..channels import HIMAWARI8
from ..errors import InputError
from ..sample import SLICE_HW, SLICE_T, Dataset
from .solar import SOLAR_CONSTANT, eccentricity, mean_cos_zenith

CLEAR_SKY_FACTOR = 0.75
CLOUD_DEPTH = 0.75

# per-channel clear value and cloud response (albedo % up, BT K down)
_BASE = np.array([8.0, 7.0, 6.0, 12.0, 10.0, 6.0,
                  290.0, 235.0, 245.0, 255.0, 285.0, 265.0, 292.0, 292.0, 290.0, 270.0])
_RESPONSE = np.array([55.0, 55.0, 58.0, 60.0, 45.0, 35.0,
                      -60.0, -15.0, -25.0, -35.0, -55.0, -40.0, -65.0, -65.0, -62.0, -45.0])


@dataclass(frozen=True)
class SynthParams:
    n: int
    seed: int
    spatial_mode: bool
    noise_std: float
    attenuate: bool
    pixel_noise: float
    lat_range: tuple
    lon_range: tuple
    hour_range: tuple
    year: int

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SyntheticData:
    dataset: Dataset
    params: SynthParams
    clear_sky: np.ndarray
    cloud_cover: np.ndarray
    attenuation: np.ndarray
    cloud: np.ndarray  # (N, T, 7, 7) cloud fraction field


def clear_sky_ghi(solar_hour, doy, latitude) -> np.ndarray:
    """Clear-sky proxy for the hour starting at local solar time ``solar_hour``."""
    return CLEAR_SKY_FACTOR * SOLAR_CONSTANT * eccentricity(doy) * mean_cos_zenith(doy, solar_hour, latitude)


def _blob_field(rng, n: int) -> np.ndarray:
    yy, xx = np.mgrid[0:SLICE_HW, 0:SLICE_HW].astype(np.float64)
    t = np.arange(SLICE_T, dtype=np.float64)
    cy = rng.uniform(-1.0, SLICE_HW, n)
    cx = rng.uniform(-1.0, SLICE_HW, n)
    vy = rng.uniform(-0.8, 0.8, n)
    vx = rng.uniform(-0.8, 0.8, n)
    sigma = rng.uniform(1.0, 2.2, n)
    amp = rng.uniform(0.5, 1.0, n)
    bg = rng.uniform(0.0, 0.15, n)
    py = (cy[:, None] + vy[:, None] * t)[:, :, None, None]
    px = (cx[:, None] + vx[:, None] * t)[:, :, None, None]
    d2 = (yy - py) ** 2 + (xx - px) ** 2
    s2 = 2.0 * sigma[:, None, None, None] ** 2
    field = bg[:, None, None, None] + amp[:, None, None, None] * np.exp(-d2 / s2)
    return np.clip(field, 0.0, 1.0)


def synthesize(n: int, seed: int = 0, spatial_mode: bool = False, *, noise_std: float = 10.0,
               attenuate: bool = True, pixel_noise: float = 0.5,
               lat_range=(22.0, 25.0), lon_range=(112.0, 115.0), hour_range=(6, 17),
               year: int = 2020) -> SyntheticData:
    if n < 1:
        raise InputError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    ndays = (date(year + 1, 1, 1) - date(year, 1, 1)).days
    doy = rng.integers(1, ndays + 1, n)
    hour = rng.integers(hour_range[0], hour_range[1] + 1, n)
    lat = rng.uniform(*lat_range, n)
    lon = rng.uniform(*lon_range, n)
    alt = rng.uniform(0.0, 1500.0, n)
    dates = [date(year, 1, 1) + timedelta(days=int(d) - 1) for d in doy]

    if spatial_mode:
        cloud = _blob_field(rng, n)
        c = SLICE_HW // 2
        cover = cloud[:, :, c, c].mean(axis=1)
    else:
        level = rng.uniform(0.0, 1.0, n)
        cloud = np.clip(level[:, None, None, None] + rng.normal(0.0, 0.02, (n, SLICE_T, SLICE_HW, SLICE_HW)),
                        0.0, 1.0)
        cover = cloud.mean(axis=(1, 2, 3))

    slices = _BASE[None, None, :, None, None] + _RESPONSE[None, None, :, None, None] * cloud[:, :, None]
    if pixel_noise > 0:
        slices = slices + rng.normal(0.0, pixel_noise, slices.shape)
    for k, ch in enumerate(HIMAWARI8):
        lo, hi = ch.valid_range
        np.clip(slices[:, :, k], lo, hi, out=slices[:, :, k])

    clear = clear_sky_ghi(hour.astype(np.float64), doy, lat)
    atten = 1.0 - CLOUD_DEPTH * cover if attenuate else np.ones(n)
    target = clear * atten
    if noise_std > 0:
        target = np.maximum(target + rng.normal(0.0, noise_std, n), 0.0)

    ds = Dataset(
        slices=slices,
        hour=hour,
        day=[d.day for d in dates],
        month=[d.month for d in dates],
        altitude=alt,
        longitude=lon,
        latitude=lat,
        target=target,
        station_id=[f"S{i % 97:03d}" for i in range(n)],
    )
    params = SynthParams(n, seed, spatial_mode, noise_std, attenuate, pixel_noise,
                         tuple(lat_range), tuple(lon_range), tuple(hour_range), year)
    return SyntheticData(ds, params, clear, cover, atten, cloud)


def synthesize_pcc_dataset(pcc_mean, n: int = 5000, seed: int = 0, hw: int = SLICE_HW) -> Dataset:
    """Dataset whose per-slice channel means correlate with the target exactly as ``pcc_mean``.

    Each channel's last frame is constant, so every slice statistic equals
    its mean; the mean series is ``r*z + sqrt(1-r^2)*e`` with ``e``
    orthogonalized against ``z``, giving sample correlation ``r`` exactly.
    """
    r = np.asarray(pcc_mean, dtype=np.float64)
    if r.shape != (len(HIMAWARI8),) or np.any(np.abs(r) > 1):
        raise InputError("pcc_mean must hold 16 values in [-1, 1]")
    rng = np.random.default_rng(seed)
    y = rng.uniform(50.0, 900.0, n)
    z = (y - y.mean()) / y.std()
    slices = np.empty((n, SLICE_T, len(r), hw, hw))
    for c, rc in enumerate(r):
        e = rng.standard_normal(n)
        e -= e.mean()
        e -= (e @ z) / (z @ z) * z
        e /= e.std()
        series = rc * z + np.sqrt(1.0 - rc * rc) * e
        lo, hi = HIMAWARI8[c].valid_range
        mid, width = 0.5 * (lo + hi), 0.05 * (hi - lo)
        slices[:, :, c] = (mid + width * series)[:, None, None, None]
    dates = rng.integers(1, 29, n)
    return Dataset(slices, rng.integers(0, 24, n), dates, rng.integers(1, 13, n),
                   np.zeros(n), np.full(n, 112.0), np.full(n, 23.0), y)
