"""Independent reference implementations used by the tests.

Everything here is written as plainly as possible (scalar loops, mpmath,
explicit sorting) and shares no code with the package beyond data classes.
"""

from __future__ import annotations

import math
from datetime import datetime, timedelta

import mpmath
import numpy as np


# -- LSTM cells by direct transcription ----------------------------------------


def _sig(v):
    return 1.0 / (1.0 + math.exp(-v))


def fc_cell_loops(x, h, c, W, U, b):
    """One FC-LSTM step; W[g] (m,n), U[g] (m,m), b[g] (m,) for g in f,i,c,o."""
    m = len(h)
    pre = {}
    for g in "fico":
        pre[g] = []
        for r in range(m):
            s = b[g][r]
            for k in range(len(x)):
                s += W[g][r][k] * x[k]
            for k in range(m):
                s += U[g][r][k] * h[k]
            pre[g].append(s)
    f = [_sig(v) for v in pre["f"]]
    i = [_sig(v) for v in pre["i"]]
    cand = [math.tanh(v) for v in pre["c"]]
    c_new = [f[r] * c[r] + i[r] * cand[r] for r in range(m)]
    o = [_sig(v) for v in pre["o"]]
    h_new = [o[r] * math.tanh(c_new[r]) for r in range(m)]
    return np.array(h_new), np.array(c_new)


def conv_same_loops(x, k):
    """Zero-padded cross-correlation: x (Cin,H,W), k (Cout,Cin,kh,kw) -> (Cout,H,W)."""
    cin, H, Wd = x.shape
    cout, _, kh, kw = k.shape
    ph, pw = kh // 2, kw // 2
    out = np.zeros((cout, H, Wd))
    for o in range(cout):
        for y in range(H):
            for xx in range(Wd):
                s = 0.0
                for ci in range(cin):
                    for dy in range(kh):
                        for dx in range(kw):
                            yy, xc = y + dy - ph, xx + dx - pw
                            if 0 <= yy < H and 0 <= xc < Wd:
                                s += k[o, ci, dy, dx] * x[ci, yy, xc]
                out[o, y, xx] = s
    return out


def conv_cell_loops(x, h, c, W, U, b):
    """One ConvLSTM step; W[g] (m,n,k,k), U[g] (m,m,k,k), b[g] (m,)."""
    pre = {g: conv_same_loops(x, W[g]) + conv_same_loops(h, U[g]) + np.asarray(b[g])[:, None, None]
           for g in "fico"}
    m, H, Wd = h.shape
    h_new = np.empty_like(h)
    c_new = np.empty_like(c)
    for r in range(m):
        for y in range(H):
            for xx in range(Wd):
                f = _sig(pre["f"][r, y, xx])
                i = _sig(pre["i"][r, y, xx])
                cand = math.tanh(pre["c"][r, y, xx])
                cn = f * c[r, y, xx] + i * cand
                o = _sig(pre["o"][r, y, xx])
                c_new[r, y, xx] = cn
                h_new[r, y, xx] = o * math.tanh(cn)
    return h_new, c_new


# -- metrics in extended precision ------------------------------------------


def metrics_mp(est, obs, dps: int = 50):
    with mpmath.workdps(dps):
        e = [mpmath.mpf(float(v)) for v in est]
        o = [mpmath.mpf(float(v)) for v in obs]
        n = len(e)
        d = [a - b for a, b in zip(e, o)]
        rmse = mpmath.sqrt(mpmath.fsum(v * v for v in d) / n)
        mbe = mpmath.fsum(d) / n
        mo = mpmath.fsum(o) / n
        me = mpmath.fsum(e) / n
        sst = mpmath.fsum((v - mo) ** 2 for v in o)
        r2 = 1 - mpmath.fsum((b - a) ** 2 for a, b in zip(e, o)) / sst
        cov = mpmath.fsum((a - me) * (b - mo) for a, b in zip(e, o))
        see = mpmath.fsum((a - me) ** 2 for a in e)
        r = cov / mpmath.sqrt(see * sst)
        return float(rmse), float(mbe), float(r2), float(r)


# -- quantiles and whiskers by sorting ------------------------------------------


def quantile_sorted(values, q):
    """Linear interpolation between order statistics at position (n-1)q."""
    s = sorted(values)
    pos = (len(s) - 1) * q
    lo = math.floor(pos)
    hi = min(lo + 1, len(s) - 1)
    frac = pos - lo
    return s[lo] + (s[hi] - s[lo]) * frac


def whisker_sorted(values):
    q1 = quantile_sorted(values, 0.25)
    q3 = quantile_sorted(values, 0.75)
    return q3 + 1.5 * (q3 - q1)


def median_sorted(values):
    s = sorted(values)
    n = len(s)
    return s[n // 2] if n % 2 else 0.5 * (s[n // 2 - 1] + s[n // 2])


# -- solar geometry at one-second resolution ---------------------------------------


def spencer_declination(doy: float) -> float:
    g = 2 * math.pi * (doy - 1) / 365.0
    return (0.006918 - 0.399912 * math.cos(g) + 0.070257 * math.sin(g) - 0.006758 * math.cos(2 * g)
            + 0.000907 * math.sin(2 * g) - 0.002697 * math.cos(3 * g) + 0.00148 * math.sin(3 * g))


def spencer_eccentricity(doy: float) -> float:
    g = 2 * math.pi * (doy - 1) / 365.0
    return (1.000110 + 0.034221 * math.cos(g) + 0.001280 * math.sin(g) + 0.000719 * math.cos(2 * g)
            + 0.000077 * math.sin(2 * g))


def etr_fine(start: datetime, lat: float, lon: float, step_s: int = 10) -> float:
    """Hourly-mean horizontal extraterrestrial irradiance from Spencer's series,
    integrated every ``step_s`` seconds, with no equation of time."""
    phi = math.radians(lat)
    total, n = 0.0, 0
    for s in range(step_s // 2, 3600, step_s):
        t = start + timedelta(seconds=s)
        doy = t.timetuple().tm_yday
        hours = t.hour + t.minute / 60 + t.second / 3600 + lon / 15.0
        omega = math.radians(15.0 * (hours - 12.0))
        dec = spencer_declination(doy)
        cz = math.sin(phi) * math.sin(dec) + math.cos(phi) * math.cos(dec) * math.cos(omega)
        total += 1361.0 * spencer_eccentricity(doy) * max(cz, 0.0)
        n += 1
    return total / n


# -- grids --------------------------------------------------------------------------


def slice_by_index(values, lat0, lon0, cell, lat, lon):
    i = int((lat0 - lat) // cell)
    j = int((lon - lon0) // cell)
    return values[:, i - 3:i + 4, j - 3:j + 4]


# -- reference channel correlations ------------------------------------------------

# mean-statistic PCC per channel B01..B16
REFERENCE_PCC_MEAN = (0.155, 0.148, 0.137, 0.183, 0.196, 0.172, 0.509, 0.024,
                      0.050, 0.097, 0.297, 0.297, 0.294, 0.276, 0.247, 0.204)
