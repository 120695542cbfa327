from datetime import datetime, timedelta

import numpy as np
import pytest

from qienet.channels import HIMAWARI8, format_channels
from qienet.errors import BoundsError, FormatError, GapError, InputError
from qienet.pipeline.dataset import (
    FaultCriteria,
    build_dataset,
    build_sample,
    channel_stats,
    dataset_bytes,
    dataset_from_bytes,
    detect_faulty_sample,
    drop_faulty,
    fault_reasons,
    frame_times,
    pcc_select,
    read_dataset,
    select_channels,
    write_dataset,
)
from qienet.pipeline.stations import StationRecord
from qienet.pipeline.synth import synthesize, synthesize_pcc_dataset
from qienet.pipeline.tiles import GridTile, extract_slice, read_tile, read_tile_dir, tile_bytes, tile_from_bytes, write_tile
from qienet.sample import Dataset
from oracles import REFERENCE_PCC_MEAN, median_sorted, slice_by_index

LAT0, LON0, CELL = 25.0, 110.0, 0.02


def valid_values(rng, hg=30, wg=40):
    lo = np.array([c.valid_range[0] for c in HIMAWARI8])
    hi = np.array([c.valid_range[1] for c in HIMAWARI8])
    mid, span = (lo + hi) / 2, (hi - lo) / 10
    return mid[:, None, None] + span[:, None, None] * rng.uniform(-1, 1, (16, hg, wg))


def hour_tiles(rng, hour: datetime):
    return {t: GridTile(t, valid_values(rng), LAT0, LON0, CELL) for t in frame_times(hour)}


def station(sid="A", lat=24.7, lon=110.31, hour=datetime(2020, 5, 4, 3), ghi=412.0):
    return StationRecord(sid, lat, lon, 50.0, hour, ghi)


def test_extract_slice_matches_index_oracle():
    rng = np.random.default_rng(0)
    ramp = np.arange(2 * 30 * 40, dtype=float).reshape(2, 30, 40)
    tile = GridTile(datetime(2020, 1, 1), ramp, LAT0, LON0, CELL, ({"id": "X", "variable": "bt"},) * 2)
    for _ in range(200):
        lat = rng.uniform(LAT0 - 26 * CELL, LAT0 - 4 * CELL)
        lon = rng.uniform(LON0 + 4 * CELL, LON0 + 36 * CELL)
        got = extract_slice(tile, lat, lon)
        np.testing.assert_array_equal(got, slice_by_index(ramp, LAT0, LON0, CELL, lat, lon))
        i, j = tile.cell_index(lat, lon)
        clat, clon = tile.cell_center(i, j)
        assert abs(clat - lat) <= CELL / 2 + 1e-12 and abs(clon - lon) <= CELL / 2 + 1e-12


def test_extract_slice_bounds():
    tile = GridTile(datetime(2020, 1, 1), valid_values(np.random.default_rng(1)), LAT0, LON0, CELL)
    with pytest.raises(BoundsError):
        extract_slice(tile, LAT0 - 0.01, LON0 + 0.3)
    with pytest.raises(BoundsError):
        extract_slice(tile, LAT0 - 0.3, LON0 + 40 * CELL - 0.01)
    assert extract_slice(tile, LAT0 - 3.5 * CELL, LON0 + 3.5 * CELL).shape == (16, 7, 7)


def test_build_sample_gaps_and_order():
    rng = np.random.default_rng(2)
    st = station()
    frames = list(hour_tiles(rng, st.timestamp).values())
    s = build_sample(frames, st)
    assert s.slices.shape == (6, 16, 7, 7) and s.target_ghi == 412.0 and (s.hour, s.day, s.month) == (3, 4, 5)
    with pytest.raises(GapError, match="03:20"):
        build_sample(frames[:2] + frames[3:], st)
    with pytest.raises(GapError, match="order"):
        build_sample(frames[::-1], st)
    with pytest.raises(GapError):
        build_sample(frames + frames[-1:], st)
    assert build_sample(frames, st, with_target=False).target_ghi is None


def test_toy_build_dataset_shape_and_order():
    rng = np.random.default_rng(3)
    tiles = {}
    hours = [datetime(2020, 5, 4, h) for h in (2, 3, 4)]
    for h in hours:
        tiles.update(hour_tiles(rng, h))
    records = [station(sid, lat, lon, h) for h in reversed(hours)
               for sid, lat, lon in (("B", 24.6, 110.5), ("A", 24.8, 110.2))]
    ds, rep = build_dataset(records, tiles)
    assert ds.shape == (6, 6, 16, 7, 7)
    assert ds.station_id == ["A", "B"] * 3
    assert ds.hour.tolist() == [2, 2, 3, 3, 4, 4]
    assert rep.built == 6 and rep.missing_frames == 0


def test_build_dataset_counts_skips():
    rng = np.random.default_rng(4)
    hour = datetime(2020, 5, 4, 3)
    tiles = hour_tiles(rng, hour)
    del tiles[hour + timedelta(minutes=40)]
    tiles.update(hour_tiles(rng, hour + timedelta(hours=1)))
    records = [station(hour=hour), station(hour=hour + timedelta(hours=1)),
               station(sid="edge", lat=LAT0 - 0.01, hour=hour + timedelta(hours=1)),
               station(sid="night", hour=hour + timedelta(hours=1), ghi=0.0)]
    ds, rep = build_dataset(records, tiles, daylight_only=True)
    assert (rep.built, rep.missing_frames, rep.out_of_bounds, rep.daylight_skipped) == (1, 1, 1, 1)
    assert len(ds) == 1


def test_fault_detection():
    rng = np.random.default_rng(5)
    base = build_sample(list(hour_tiles(rng, datetime(2020, 5, 4, 3)).values()), station())
    assert not detect_faulty_sample(base)
    x = base.slices.copy()
    x[:, 3] = np.nan
    assert "B04: non-finite values" in fault_reasons(base.with_slices(x))
    x = base.slices.copy()
    x[2, 12, 3, 3] = 500.0
    assert detect_faulty_sample(base.with_slices(x))
    x = base.slices.copy()
    x[:, 0] = 65535.0
    assert any("sentinel" in r for r in fault_reasons(base.with_slices(x)))
    x = base.slices.copy()
    x[:, 8] = -999.0
    assert any("sentinel" in r for r in fault_reasons(base.with_slices(x), FaultCriteria(bt_range=(-1e4, 1e4))))
    ds = Dataset.from_samples([base, base.with_slices(x)])
    clean, dropped = drop_faulty(ds)
    assert len(clean) == 1 and dropped == 1


def test_channel_stats_against_sort_oracle():
    ds = synthesize(12, seed=6).dataset
    per, overall = channel_stats(ds)
    for i in range(3):
        for c in (0, 9):
            v = ds.slices[i, :, c].ravel().tolist()
            assert per.max[i, c] == max(v) and per.min[i, c] == min(v)
            assert per.median[i, c] == median_sorted(v)
            assert per.mean[i, c] == pytest.approx(sum(v) / len(v), rel=1e-14)
    assert overall.median[4] == median_sorted(ds.slices[:, :, 4].ravel().tolist())
    last, _ = channel_stats(ds, timestep=-1)
    assert last.max[0, 2] == ds.slices[0, -1, 2].max()
    tiny = Dataset(np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 1, 1, 2, 2), [0], [1], [1], [0], [0], [0], [1.0])
    assert channel_stats(tiny)[0].median[0, 0] == 2.5


def test_reference_correlations_select_ir_channels():
    chosen = select_channels(REFERENCE_PCC_MEAN, 0.24)
    assert format_channels(chosen) == "B07,B11,B12,B13,B14,B15"
    named = dict(zip([c.id for c in HIMAWARI8], REFERENCE_PCC_MEAN))
    assert select_channels(named) == chosen


def test_pcc_select_on_constructed_dataset():
    ds = synthesize_pcc_dataset(REFERENCE_PCC_MEAN, n=2000, seed=0)
    res = pcc_select(ds)
    np.testing.assert_allclose(res.table["mean"], REFERENCE_PCC_MEAN, atol=1e-9)
    assert format_channels(res.selected) == "B07,B11,B12,B13,B14,B15"


def test_pcc_injected_channel_and_affine_invariance():
    rng = np.random.default_rng(7)
    n = 10_000
    ds = synthesize(n, seed=7).dataset
    slices = ds.slices.copy()
    slices[:, -1, 3] = rng.uniform(0, 100, (n, 7, 7))
    slices[:, -1, 5] = ds.target[:, None, None] / 20.0  # exact linear copy of the target
    slices[:, -1, 9] = 240.0  # zero variance
    ds2 = ds.with_slices(slices, normalized=False)
    res = pcc_select(ds2)
    assert res.table["mean"][5] == pytest.approx(1.0, abs=1e-12)
    assert abs(res.table["mean"][3]) < 0.05
    assert res.zero_variance["mean"][9] and res.table["mean"][9] == 0.0
    shifted = ds2.with_slices(slices * 3.0 + 7.0, normalized=False)
    np.testing.assert_allclose(pcc_select(shifted).table["mean"], res.table["mean"], atol=1e-10)


def test_tile_round_trip(tmp_path):
    rng = np.random.default_rng(8)
    t = GridTile(datetime(2020, 5, 4, 3, 10), valid_values(rng), LAT0, LON0, CELL)
    write_tile(t, tmp_path / "a.qtil")
    back = read_tile(tmp_path / "a.qtil")
    np.testing.assert_array_equal(back.values, t.values.astype(np.float32))
    assert (back.timestamp, back.origin_lat, back.cell_size, back.channels) == (t.timestamp, LAT0, CELL, t.channels)
    assert list(read_tile_dir(tmp_path)) == [t.timestamp]
    blob = tile_bytes(t)
    with pytest.raises(FormatError, match="magic"):
        tile_from_bytes(b"QTIX" + blob[4:])
    with pytest.raises(FormatError):
        tile_from_bytes(blob[:-1])


def test_dataset_round_trip(tmp_path):
    ds = synthesize(25, seed=9).dataset
    path = tmp_path / "d.qdst"
    write_dataset(ds, path)
    back = read_dataset(path)
    np.testing.assert_array_equal(back.slices, ds.slices.astype(np.float32))
    np.testing.assert_array_equal(back.target, ds.target)
    for k in ("hour", "day", "month", "altitude", "longitude", "latitude"):
        np.testing.assert_array_equal(getattr(back, k), getattr(ds, k))
    assert back.station_id == ds.station_id
    blob = dataset_bytes(ds)
    with pytest.raises(FormatError, match="magic"):
        dataset_from_bytes(b"ABCD" + blob[4:])
    with pytest.raises(FormatError):
        dataset_from_bytes(blob[:-8])
    with pytest.raises(InputError):
        dataset_bytes(ds.with_slices(ds.slices, normalized=True))
