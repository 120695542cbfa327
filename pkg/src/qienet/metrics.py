"""RMSE, MBE, R^2 and Pearson r, overall and per station.

All variances use the population (1/n) convention. Undefined metrics raise
:class:`UndefinedMetricError` rather than returning NaN.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionError, InputError, UndefinedMetricError

CSV_HEADER = ("station_id", "n", "rmse_wm2", "mbe_wm2", "r2", "r")


def _pair(est, obs, min_n: int = 1):
    est = np.asarray(est, dtype=np.float64).ravel()
    obs = np.asarray(obs, dtype=np.float64).ravel()
    if est.shape != obs.shape:
        raise DimensionError(f"estimates ({est.size}) and observations ({obs.size}) differ in length")
    if est.size < min_n:
        raise InputError(f"need at least {min_n} pairs, got {est.size}")
    if not (np.all(np.isfinite(est)) and np.all(np.isfinite(obs))):
        raise InputError("non-finite values in metric input")
    return est, obs


def rmse(est, obs) -> float:
    est, obs = _pair(est, obs)
    d = est - obs
    return math.sqrt(float(np.dot(d, d)) / d.size)


def mbe(est, obs) -> float:
    est, obs = _pair(est, obs)
    return float(np.mean(est - obs))


def r2(est, obs) -> float:
    est, obs = _pair(est, obs, min_n=2)
    centered = obs - obs.mean()
    sst = float(np.dot(centered, centered))
    if sst == 0.0:
        raise UndefinedMetricError("R^2 undefined: observations have zero variance")
    d = obs - est
    return 1.0 - float(np.dot(d, d)) / sst


def pearson_r(est, obs) -> float:
    est, obs = _pair(est, obs, min_n=2)
    a = est - est.mean()
    b = obs - obs.mean()
    saa, sbb = float(np.dot(a, a)), float(np.dot(b, b))
    if saa == 0.0 or sbb == 0.0:
        which = "estimates" if saa == 0.0 else "observations"
        raise UndefinedMetricError(f"Pearson r undefined: {which} have zero variance")
    r = float(np.dot(a, b)) / math.sqrt(saa * sbb)
    return max(-1.0, min(1.0, r))


@dataclass
class MetricsReport:
    rmse: float
    mbe: float
    r2: float
    r: float
    n: int
    station_id: Optional[str] = None

    def to_dict(self) -> dict:
        return asdict(self)

    def row(self) -> list:
        return [self.station_id or "", self.n, self.rmse, self.mbe, self.r2, self.r]


def evaluate(est, obs, station_id: Optional[str] = None) -> MetricsReport:
    est, obs = _pair(est, obs, min_n=2)
    return MetricsReport(
        rmse=rmse(est, obs),
        mbe=mbe(est, obs),
        r2=r2(est, obs),
        r=pearson_r(est, obs),
        n=int(est.size),
        station_id=station_id,
    )


@dataclass
class StationSummary:
    reports: list
    mean: dict
    std: dict
    skipped: list

    def to_dict(self) -> dict:
        return {
            "stations": [r.to_dict() for r in self.reports],
            "mean": self.mean,
            "std": self.std,
            "skipped": self.skipped,
        }


def per_station_report(station_ids: Sequence[str], est, obs) -> StationSummary:
    """One report per station plus mean and population std of each indicator.

    Stations with fewer than two pairs, or with an undefined metric, are
    skipped and listed with a reason.
    """
    est = np.asarray(est, dtype=np.float64).ravel()
    obs = np.asarray(obs, dtype=np.float64).ravel()
    ids = [str(s) for s in station_ids]
    if not (len(ids) == est.size == obs.size):
        raise DimensionError("station ids, estimates and observations must have equal length")
    reports, skipped = [], []
    for sid in sorted(set(ids)):
        mask = np.array([s == sid for s in ids])
        if mask.sum() < 2:
            skipped.append({"station_id": sid, "n": int(mask.sum()), "reason": "fewer than 2 pairs"})
            warnings.warn(f"station {sid}: fewer than 2 pairs, skipped", RuntimeWarning, stacklevel=2)
            continue
        try:
            reports.append(evaluate(est[mask], obs[mask], station_id=sid))
        except UndefinedMetricError as exc:
            skipped.append({"station_id": sid, "n": int(mask.sum()), "reason": str(exc)})
            warnings.warn(f"station {sid}: {exc}", RuntimeWarning, stacklevel=2)
    mean, std = {}, {}
    for key in ("rmse", "mbe", "r2", "r"):
        vals = np.array([getattr(r, key) for r in reports])
        mean[key] = float(vals.mean()) if vals.size else float("nan")
        std[key] = float(vals.std()) if vals.size else float("nan")
    return StationSummary(reports, mean, std, skipped)


def metrics_csv(summary: StationSummary) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in summary.reports:
        w.writerow(r.row())
    n_total = sum(r.n for r in summary.reports)
    s, m = summary.std, summary.mean
    w.writerow(["mean", n_total, m["rmse"], m["mbe"], m["r2"], m["r"]])
    w.writerow(["std", n_total, s["rmse"], s["mbe"], s["r2"], s["r"]])
    for sk in summary.skipped:
        w.writerow([f"skipped:{sk['station_id']}", sk["n"], "", "", "", ""])
    return buf.getvalue()
