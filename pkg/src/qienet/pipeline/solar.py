"""Hourly-mean extraterrestrial horizontal irradiance.

Solar constant 1361 W/m2, eccentricity factor 1 + 0.033 cos(2 pi n / 365),
Cooper declination, hour angle from UTC plus longitude / 15 (no equation of
time). cos(zenith) is sampled at the middle of every minute of the hour and
clamped at zero before averaging.
"""

from __future__ import annotations

import math
from datetime import datetime, timezone

import numpy as np

from ..errors import InputError

SOLAR_CONSTANT = 1361.0
_MINUTES = (np.arange(60) + 0.5) / 60.0


def to_utc(ts: datetime) -> datetime:
    """Naive datetimes are taken as UTC; aware ones are converted and made naive."""
    if ts.tzinfo is not None:
        ts = ts.astimezone(timezone.utc).replace(tzinfo=None)
    return ts


def eccentricity(doy):
    return 1.0 + 0.033 * np.cos(2.0 * np.pi * np.asarray(doy, dtype=np.float64) / 365.0)


def declination(doy):
    """Cooper (1969) solar declination in radians."""
    doy = np.asarray(doy, dtype=np.float64)
    return np.radians(23.45) * np.sin(2.0 * np.pi * (284.0 + doy) / 365.0)


def mean_cos_zenith(doy, solar_hour_start, latitude):
    """Average of max(0, cos zenith) over the hour starting at local solar time ``solar_hour_start``."""
    doy = np.asarray(doy, dtype=np.float64)[..., None]
    t = np.asarray(solar_hour_start, dtype=np.float64)[..., None] + _MINUTES
    phi = np.radians(np.asarray(latitude, dtype=np.float64))[..., None]
    dec = declination(doy)
    omega = np.radians(15.0 * (t - 12.0))
    cz = np.sin(phi) * np.sin(dec) + np.cos(phi) * np.cos(dec) * np.cos(omega)
    return np.maximum(cz, 0.0).mean(axis=-1)


def _check_lat(latitude):
    lat = np.asarray(latitude, dtype=np.float64)
    if np.any(~np.isfinite(lat)) or np.any(np.abs(lat) > 90.0):
        raise InputError(f"latitude must lie within [-90, 90], got {latitude}")


def extraterrestrial_ghi(timestamp: datetime, latitude: float, longitude: float) -> float:
    """Hourly-mean top-of-atmosphere horizontal irradiance (W/m2) for the hour starting at ``timestamp``."""
    _check_lat(latitude)
    ts = to_utc(timestamp)
    start = ts.replace(minute=0, second=0, microsecond=0)
    doy = start.timetuple().tm_yday
    solar = start.hour + longitude / 15.0
    return float(SOLAR_CONSTANT * eccentricity(doy) * mean_cos_zenith(doy, solar, latitude))


def extraterrestrial_ghi_many(timestamps, latitudes, longitudes) -> np.ndarray:
    """Vectorized :func:`extraterrestrial_ghi` over aligned sequences."""
    _check_lat(latitudes)
    starts = [to_utc(t) for t in timestamps]
    doy = np.array([t.timetuple().tm_yday for t in starts], dtype=np.float64)
    hour = np.array([t.hour for t in starts], dtype=np.float64)
    solar = hour + np.asarray(longitudes, dtype=np.float64) / 15.0
    return SOLAR_CONSTANT * eccentricity(doy) * mean_cos_zenith(doy, solar, latitudes)


def local_solar_midnight_hour(longitude: float) -> float:
    """UTC hour-of-day at which local mean solar time is 00:00."""
    return math.fmod(24.0 - longitude / 15.0 + 48.0, 24.0)
