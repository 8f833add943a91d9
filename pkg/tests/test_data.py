from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from doubleadapt.data import (DataError, DateSlice, IngestionError, ScheduleError, StreamDataset,
                              all_tasks_schedule, build_schedule, label_from_prices, load_csv, normalize, write_csv)

from conftest import make_dataset


def _write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def test_load_two_dates_two_instruments(tmp_path):
    p = _write(tmp_path, "date,instrument,f0,f1,f2,label\n"
                         "2020-01-02,A,1,2,3,0.1\n2020-01-01,B,1,2,3,0.2\n"
                         "2020-01-01,A,4,5,6,0.3\n2020-01-02,B,4,5,6,0.4\n")
    ds = load_csv(p)
    assert ds.n_dates == 2 and ds.feature_dim == 3
    assert [len(s) for s in ds.slices] == [2, 2]
    assert ds.date_labels == ("2020-01-01", "2020-01-02")
    assert ds.slices[0].instruments == ("A", "B")
    np.testing.assert_array_equal(ds.slices[0].X[0], [4, 5, 6])
    assert [s.date_index for s in ds.slices] == [0, 1]


def test_integer_dates_sort_numerically(tmp_path):
    p = _write(tmp_path, "date,instrument,f0,label\n10,A,1,1\n9,A,2,2\n100,A,3,3\n")
    assert load_csv(p).date_labels == ("9", "10", "100")


@pytest.mark.parametrize("body,match", [
    ("", "empty"),
    ("date,instrument,f0\n1,A,2\n", "missing column"),
    ("date,instrument,f0,label\n1,A,x,2\n", "row 2"),
    ("date,instrument,f0,label\n1,A,1,2\n1,B,nan,2\n", "row 3"),
    ("date,instrument,f0,label\n1,A,1,2\n1,A,1,2\n", "row 3.*duplicate"),
    ("date,instrument,f0,label\n1,A,1\n", "row 2"),
])
def test_ingestion_errors(tmp_path, body, match):
    with pytest.raises(IngestionError, match=match):
        load_csv(_write(tmp_path, body))


def test_metadata_lines_skipped_and_roundtrip(tmp_path):
    ds = make_dataset(4, 3, 2, seed=5)
    path = tmp_path / "s.csv"
    write_csv(ds, path, {"seed": 7})
    assert path.read_text().startswith("# seed=7\n")
    back = load_csv(path)
    assert back.n_dates == ds.n_dates
    for a, b in zip(ds.slices, back.slices):
        assert a.instruments == b.instruments
        assert np.array_equal(a.X, b.X) and np.array_equal(a.y, b.y)


def test_price_mode(tmp_path):
    p = _write(tmp_path, "date,instrument,f0,price\n1,A,0.5,100\n2,A,0.6,110\n3,A,0.7,55\n")
    ds = load_csv(p)
    assert ds.n_dates == 2
    assert ds.slices[0].y[0] == pytest.approx(0.1, abs=1e-15)
    assert ds.slices[1].y[0] == pytest.approx(-0.5, abs=1e-15)


def test_label_from_prices():
    assert label_from_prices([100, 110]) == pytest.approx([0.10])
    assert label_from_prices([100, 50]).tolist() == [-0.5]
    assert np.all(label_from_prices([3, 3, 3]) == 0)
    with pytest.raises(DataError):
        label_from_prices([1, 0])
    with pytest.raises(DataError):
        label_from_prices([1])


def test_dateslice_validation():
    with pytest.raises(DataError):
        DateSlice(0, ("a", "a"), np.zeros((2, 1)), np.zeros(2))
    with pytest.raises(DataError):
        DateSlice(0, (), np.zeros((0, 1)), np.zeros(0))
    s = DataError
    with pytest.raises(s):
        StreamDataset((DateSlice(1, ("a",), np.zeros((1, 1)), np.zeros(1)),
                       DateSlice(1, ("b",), np.zeros((1, 1)), np.zeros(1))), 1)


def test_normalize_examples():
    insts = ("a", "b")
    slices = (DateSlice(0, insts, np.array([[5.0, 1.0], [5.0, 3.0]]), np.array([1.0, 3.0])),
              DateSlice(1, insts, np.array([[5.0, 2.0], [5.0, 4.0]]), np.array([2.0, 2.0])))
    ds = normalize(StreamDataset(slices, 2), train_end=0)
    assert np.all(ds.slices[0].X[:, 0] == 0) and np.all(ds.slices[1].X[:, 0] == 0)
    assert ds.slices[0].y.tolist() == [-1.0, 1.0]
    assert any(w["warning"] == "zero_feature_std" for w in ds.warnings)
    # later dates use stored moments: (x - 2) / 1
    assert ds.slices[1].X[:, 1].tolist() == [0.0, 2.0]
    assert normalize(ds, 1) is ds


def test_single_sample_date_passes_through():
    slices = (DateSlice(0, ("a", "b"), np.array([[0.0], [1.0]]), np.array([0.0, 1.0])),
              DateSlice(1, ("a",), np.array([[1.0]]), np.array([7.0])))
    ds = normalize(StreamDataset(slices, 1), 0)
    assert ds.slices[1].y.tolist() == [7.0]
    assert any(w["warning"] == "single_sample_date" for w in ds.warnings)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_normalized_labels_standardized(seed):
    ds = normalize(make_dataset(5, 7, 3, seed), 2)
    for s in ds.slices:
        assert abs(s.y.mean()) <= 1e-10 and abs(s.y.std() - 1) <= 1e-10


def test_schedule_examples():
    ds = make_dataset(60, 2, 1)
    tasks = all_tasks_schedule(ds, 20)
    assert len(tasks) == 2
    assert [s.date_index for s in tasks[0].train_slices] == list(range(20))
    assert [s.date_index for s in tasks[0].test_slices] == list(range(20, 40))
    four = all_tasks_schedule(make_dataset(4, 2, 1), 1)
    assert [(t.train_slices[0].date_index, t.test_slices[0].date_index) for t in four] == [(0, 1), (1, 2), (2, 3)]


def test_schedule_splits_and_errors():
    ds = make_dataset(100, 2, 1)
    sch = build_schedule(ds, 10, 39, 69)
    assert len(sch.tasks) == 9
    assert sch.k0 == 3 and sch.k_valid == 6
    assert [t.k for t in sch.meta_valid] == [4, 5, 6]
    assert [t.k for t in sch.meta_test] == [7, 8, 9]
    assert sch.online[0].k == 4
    with pytest.raises(ScheduleError):
        build_schedule(ds, 10, 69, 39)
    with pytest.raises(ScheduleError):
        build_schedule(ds, 60, 39, 69)
    w = build_schedule(make_dataset(105, 2, 1), 10, 39, 69).warnings
    assert w[0]["warning"] == "trailing_dates_dropped"


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 60), st.integers(1, 7))
def test_windows_tile_the_stream(n, r):
    tasks = all_tasks_schedule(make_dataset(n, 1, 1), r)
    assert len(tasks) == max(0, n // r - 1)
    for a, b in zip(tasks, tasks[1:]):
        assert a.test_slices == b.train_slices
        assert b.train_start - a.train_start == r
    for t in tasks:
        assert len(t.train_slices) == len(t.test_slices) == r


def test_with_test_labels_does_not_touch_features():
    t = all_tasks_schedule(make_dataset(4, 3, 2), 2)[0]
    z = t.with_test_labels(np.zeros(t.n_test))
    assert np.all(z.test_labels() == 0) and np.array_equal(z.test_features(), t.test_features())
