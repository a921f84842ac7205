import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_dataset
from genf.data import (ArProcess, ScalingParams, TimeSeriesDataset, Unit, fit_scaling, impute_last_observation,
                       load_csv_dataset, load_dataset, load_schema, make_windows, parse_process, save_dataset,
                       scale_minmax, split_chronological, split_units, synth_ar_process)
from genf.errors import ConfigError, ContractError, DataError


def write_csv(path, rows, header="station,year,month,day,hour,PM10,SO2,NO2,O3,PM2.5,CO"):
    path.write_text(header + "\n" + "\n".join(rows) + "\n")
    return path


# ------------------------------------------------------------------ csv


def test_csv_two_units(tmp_path):
    rows = []
    for site in ("A", "B"):
        for h in range(10):
            rows.append(f"{site},{h},{h * 2},{h * 3}")
    p = write_csv(tmp_path / "d.csv", rows, header="site,t,x,y")
    ds = load_csv_dataset(p, {"unit": "site", "time": "t", "features": ["x", "y"]})
    assert len(ds) == 2 and ds.K == 2
    assert ds.unit("B").values[3].tolist() == [6.0, 9.0]


def test_csv_air_quality_preset(tmp_path):
    rows = [f"Aoti,2013,3,1,{h},{h},2,3,4,5,600" for h in range(5)]
    ds = load_csv_dataset(write_csv(tmp_path / "a.csv", rows), "uci_air_quality")
    assert ds.K == 6 and ds.ids == ["Aoti"]
    assert ds.feature_names == ["PM10", "SO2", "NO2", "O3", "PM2.5", "CO"]


def test_csv_rows_sorted_by_time(tmp_path):
    rows = ["A,3,30", "A,1,10", "A,2,20"]
    ds = load_csv_dataset(write_csv(tmp_path / "s.csv", rows, "u,t,x"), {"unit": "u", "time": "t", "features": ["x"]})
    assert ds.units[0].values[:, 0].tolist() == [10, 20, 30]


def test_csv_bad_cell_becomes_missing_then_imputed(tmp_path):
    rows = ["A,0,1", "A,1,oops", "A,2,NA", "A,3,4"]
    ds = load_csv_dataset(write_csv(tmp_path / "m.csv", rows, "u,t,x"), {"unit": "u", "time": "t", "features": ["x"]})
    assert np.isnan(ds.units[0].values[1:3, 0]).all()
    assert impute_last_observation(ds).units[0].values[:, 0].tolist() == [1, 1, 1, 4]


def test_csv_missing_column_is_config_error(tmp_path):
    p = write_csv(tmp_path / "c.csv", ["A,0,1"], "u,t,x")
    with pytest.raises(ConfigError):
        load_csv_dataset(p, {"unit": "u", "time": "t", "features": ["x", "nope"]})


def test_csv_empty_file_is_data_error(tmp_path):
    p = tmp_path / "e.csv"
    p.write_text("")
    with pytest.raises(DataError):
        load_csv_dataset(p, {"unit": "u", "time": "t", "features": ["x"]})
    p.write_text("u,t,x\n")
    with pytest.raises(DataError):
        load_csv_dataset(p, {"unit": "u", "time": "t", "features": ["x"]})


def test_schema_file(tmp_path):
    p = tmp_path / "schema.yaml"
    p.write_text("preset: uci_air_quality\nfeatures: [NO2]\n")
    s = load_schema(str(p))
    assert s["features"] == ["NO2"] and s["unit"] == "station"
    with pytest.raises(ConfigError):
        load_schema("no-such-preset")


# ----------------------------------------------------------- imputation


def test_impute_identity_and_first_row_error():
    ds = make_dataset([5, 5])
    out = impute_last_observation(ds)
    assert all(np.array_equal(a.values, b.values) for a, b in zip(ds.units, out.units))
    bad = TimeSeriesDataset([Unit("z", np.array([[np.nan, 1.0], [2.0, 2.0]]))], ["a", "b"])
    with pytest.raises(DataError, match="'z'.*'a'"):
        impute_last_observation(bad)


def test_dataset_invariants():
    with pytest.raises(DataError):
        TimeSeriesDataset([Unit("a", np.zeros((3, 2))), Unit("a", np.zeros((3, 2)))], ["x", "y"])
    with pytest.raises(DataError):
        TimeSeriesDataset([Unit("a", np.zeros((3, 3)))], ["x", "y"])
    with pytest.raises(DataError):
        Unit("a", np.zeros((0, 2)))


# --------------------------------------------------------------- scaling


def test_scale_definition():
    ds = TimeSeriesDataset([Unit("a", np.array([[2.0], [4.0], [6.0]]))], ["x"])
    out, params = scale_minmax(ds)
    assert out.units[0].values[:, 0].tolist() == [0.0, 0.5, 1.0]
    assert params.min.tolist() == [2.0] and params.max.tolist() == [6.0]


def test_scale_constant_feature_warns():
    ds = TimeSeriesDataset([Unit("a", np.array([[5.0, 1.0], [5.0, 2.0], [5.0, 3.0]]))], ["c", "x"])
    with pytest.warns(UserWarning, match="constant"):
        out, params = scale_minmax(ds)
    assert out.units[0].values[:, 0].tolist() == [0.0, 0.0, 0.0]
    assert params.constant_features == [0]


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=30).filter(lambda v: max(v) > min(v)))
def test_scale_round_trip_and_monotone(vals):
    ds = TimeSeriesDataset([Unit("a", np.array(vals)[:, None])], ["x"])
    out, params = scale_minmax(ds)
    s = out.units[0].values[:, 0]
    assert s.min() >= 0 and s.max() <= 1
    assert np.allclose(params.inverse(out.units[0].values), ds.units[0].values, atol=1e-9, rtol=0)
    order = np.argsort(vals, kind="stable")
    assert np.all(np.diff(s[order]) >= 0)


def test_scale_fit_on_train_only():
    ds = make_dataset([20] * 4)
    out, params = scale_minmax(ds, fit_on=["u0", "u1"])
    ref = fit_scaling(ds.subset(["u0", "u1"]))
    assert np.array_equal(params.min, ref.min) and np.array_equal(params.max, ref.max)
    again, _ = scale_minmax(ds, params)
    assert np.array_equal(again.units[3].values, out.units[3].values)


def test_scaling_params_dict_round_trip():
    p = ScalingParams(np.array([0.0, 1.0]), np.array([2.0, 1.0]), [1])
    q = ScalingParams.from_dict(p.to_dict())
    assert np.array_equal(q.min, p.min) and q.constant_features == [1]
    with pytest.raises(ConfigError):
        ScalingParams(np.array([1.0]), np.array([0.0]))


# ------------------------------------------------------------- windowing


def test_window_counts():
    ds = make_dataset([10])
    assert len(make_windows(ds, 4, [1])) == 6
    ds = make_dataset([144])
    assert len(make_windows(ds, 20, [8, 12, 30, 60])) == 65


def test_window_target_definition():
    ds = TimeSeriesDataset([Unit("a", np.arange(6.0)[:, None])], ["x"])
    w = make_windows(ds, 4, [1])
    assert w.windows[0, :, 0].tolist() == [0, 1, 2, 3] and w.targets[1][0, 0] == 4


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(1, 25), min_size=1, max_size=4), st.integers(1, 6),
       st.lists(st.integers(1, 5), min_size=1, max_size=3))
def test_windows_match_direct_indexing(lengths, M, horizons):
    ds = make_dataset(lengths, K=2, seed=len(lengths))
    w = make_windows(ds, M, horizons)
    hmax = max(horizons)
    assert set(w.skipped) == {u.id for u in ds.units if len(u) < M + hmax}
    assert len(w) == sum(max(len(u) - M - hmax + 1, 0) for u in ds.units)
    for i in range(len(w)):
        uid, win, tg = w.sample(i)
        v = ds.unit(uid).values
        s = w.starts[i]
        assert np.array_equal(win, v[s:s + M])
        for h in horizons:
            assert np.array_equal(tg[h], v[s + M - 1 + h])


def test_window_config_errors():
    ds = make_dataset([10])
    with pytest.raises(ConfigError):
        make_windows(ds, 0, [1])
    with pytest.raises(ConfigError):
        make_windows(ds, 3, [0])


def test_take_and_with_windows():
    w = make_windows(make_dataset([12, 12]), 3, [1, 2])
    sub = w.take([0, 5])
    assert len(sub) == 2 and np.array_equal(sub.targets[2][1], w.targets[2][5])
    with pytest.raises(ContractError):
        w.with_windows(np.zeros((1, 3, 2)))


# ---------------------------------------------------------------- splits


def test_split_units_sizes_and_partition():
    ds = make_dataset([5] * 10)
    tr, te, va = split_units(ds, (0.6, 0.2, 0.2), seed=7)
    assert (len(tr), len(te), len(va)) == (6, 2, 2)
    ids = tr.ids + te.ids + va.ids
    assert sorted(ids) == sorted(ds.ids) and len(set(ids)) == 10
    again = split_units(ds, (0.6, 0.2, 0.2), seed=7)
    assert [s.ids for s in again] == [tr.ids, te.ids, va.ids]


@settings(max_examples=40, deadline=None)
@given(st.integers(3, 40), st.integers(0, 10_000))
def test_split_units_partition_property(n, seed):
    ds = make_dataset([3] * n)
    parts = split_units(ds, seed=seed)
    ids = [i for p in parts for i in p.ids]
    assert sorted(ids) == sorted(ds.ids)


def test_split_errors():
    with pytest.raises(ConfigError):
        split_units(make_dataset([5] * 10), (0.5, 0.5, 0.1))
    with pytest.raises(DataError):
        split_units(make_dataset([5, 5]))


def test_split_chronological_segments():
    ds = TimeSeriesDataset([Unit("a", np.arange(100.0)[:, None])], ["x"])
    tr, te, va = split_chronological(ds, (0.6, 0.2, 0.2))
    assert tr.units[0].times[[0, -1]].tolist() == [0, 59]
    assert va.units[0].times[[0, -1]].tolist() == [60, 79]
    assert te.units[0].times[[0, -1]].tolist() == [80, 99]


def test_split_chronological_no_leak_and_skips():
    ds = make_dataset([100, 40, 12])
    tr, te, va = split_chronological(ds, (0.6, 0.2, 0.2), min_length=8)
    for u in tr.units:
        assert u.times.max() < va.unit(u.id).times.min() if u.id in va.ids else True
    for u in va.units:
        assert u.times.max() < te.unit(u.id).times.min()
    # 12 rows -> segments of 7/2/3, all under min_length
    assert all("u2" in part.meta["skipped_units"] for part in (tr, te, va))
    assert tr.ids == ["u0", "u1"]


# ------------------------------------------------------------ synthetic


def test_ar_white_noise():
    ds = synth_ar_process(parse_process("ar1:phi=0"), units=1, length=20000, seed=1)
    x = ds.units[0].values[:, 0]
    assert abs(np.corrcoef(x[:-1], x[1:])[0, 1]) < 0.03


def test_ar1_stationary_variance():
    ds = synth_ar_process(parse_process("ar1:phi=0.9,sigma=1"), units=1, length=10000, seed=3)
    assert ds.units[0].values.var() == pytest.approx(1 / (1 - 0.81), rel=0.1)


def test_ar_reproducible_and_unstable():
    p = parse_process("ar2:a1=0.5,a2=0.2")
    a = synth_ar_process(p, units=2, length=30, seed=4)
    b = synth_ar_process(p, units=2, length=30, seed=4)
    assert np.array_equal(a.units[1].values, b.units[1].values)
    assert a.process is p
    with pytest.raises(ConfigError):
        synth_ar_process(parse_process("ar1:phi=1.01"), units=1, length=10)


def test_conditional_mean_matches_companion_unroll():
    A1 = np.array([[0.5, 0.1], [0.0, 0.4]])
    A2 = np.array([[0.1, 0.0], [0.05, 0.2]])
    proc = ArProcess(np.stack([A1, A2]), 1.0)
    w = np.random.default_rng(0).normal(size=(3, 5, 2))
    # hand recursion with zero future noise
    hist = [w[:, -2], w[:, -1]]
    for _ in range(3):
        hist.append(hist[-1] @ A1.T + hist[-2] @ A2.T)
    assert np.allclose(proc.conditional_mean(w, 3), hist[-1])


def test_parse_process_errors():
    with pytest.raises(ConfigError):
        parse_process("garch:x=1")


def test_save_load_round_trip(tmp_path):
    ds = synth_ar_process(parse_process("ar1:phi=0.5"), units=3, length=15, seed=2)
    scaled, params = scale_minmax(ds)
    p = save_dataset(tmp_path / "d.npz", scaled, params, source="synthetic", seed=2)
    back, sp = load_dataset(p)
    assert back.ids == ds.ids and back.feature_names == ds.feature_names
    assert all(np.array_equal(a.values, b.values) for a, b in zip(back.units, scaled.units))
    assert np.array_equal(sp.max, params.max)
    assert back.meta["provenance"]["seed"] == 2
    assert back.process.coefs.shape == (1, 1, 1)
