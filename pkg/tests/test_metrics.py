import numpy as np
import pytest

from qienet.errors import DimensionError, InputError, UndefinedMetricError
from qienet.metrics import evaluate, mbe, metrics_csv, pearson_r, per_station_report, r2, rmse
from oracles import metrics_mp


def test_metrics_match_extended_precision():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(2, 60))
        obs = rng.uniform(0, 1000, n)
        est = obs + rng.normal(0, 80, n)
        got = (rmse(est, obs), mbe(est, obs), r2(est, obs), pearson_r(est, obs))
        want = metrics_mp(est, obs)
        for g, w in zip(got, want):
            worst = max(worst, abs(g - w) / max(1.0, abs(w)))
    assert worst <= 1e-12


def test_perfect_prediction_exact():
    obs = np.array([0.0, 120.5, 333.25, 800.0])
    assert (rmse(obs, obs), mbe(obs, obs), r2(obs, obs), pearson_r(obs, obs)) == (0.0, 0.0, 1.0, 1.0)


def test_known_values():
    est = np.array([1.0, 2.0, 3.0])
    obs = np.array([2.0, 2.0, 2.0 + 1e-9])
    assert rmse([3.0, 4.0], [0.0, 0.0]) == pytest.approx(np.sqrt(12.5))
    assert mbe([3.0, 4.0], [1.0, 1.0]) == 2.5
    assert pearson_r([1, 2, 3], [2, 4, 6]) == 1.0
    assert pearson_r([1, 2, 3], [3, 2, 1]) == -1.0
    assert r2(est, obs) < 0


def test_undefined_metrics():
    with pytest.raises(UndefinedMetricError):
        r2([1.0, 2.0], [5.0, 5.0])
    with pytest.raises(UndefinedMetricError):
        pearson_r([1.0, 1.0], [1.0, 2.0])
    with pytest.raises(InputError):
        r2([1.0], [1.0])
    with pytest.raises(DimensionError):
        rmse([1.0, 2.0], [1.0])
    with pytest.raises(InputError):
        rmse([np.nan, 1.0], [1.0, 1.0])


def test_evaluate_and_per_station():
    rng = np.random.default_rng(1)
    ids = ["A"] * 5 + ["B"] * 4 + ["C"]
    obs = rng.uniform(0, 900, 10)
    est = obs + rng.normal(0, 30, 10)
    with pytest.warns(RuntimeWarning, match="C"):
        summary = per_station_report(ids, est, obs)
    assert [r.station_id for r in summary.reports] == ["A", "B"]
    assert summary.skipped[0]["station_id"] == "C"
    a = evaluate(est[:5], obs[:5])
    b = evaluate(est[5:9], obs[5:9])
    assert summary.mean["rmse"] == pytest.approx((a.rmse + b.rmse) / 2)
    assert summary.std["rmse"] == pytest.approx(abs(a.rmse - b.rmse) / 2)  # population std
    text = metrics_csv(summary)
    assert text.splitlines()[0] == "station_id,n,rmse_wm2,mbe_wm2,r2,r"
    assert "skipped:C" in text
