"""Loading, splitting, and windowing."""
import json

import numpy as np
import pytest

from tsdiag.core import Series
from tsdiag.errors import (
    DegenerateSplit,
    EmptyFile,
    MissingColumn,
    MissingInput,
    ParseError,
)
from tsdiag.ingest import (
    WindowPlan,
    load_csv,
    load_dataset,
    load_jsonl,
    temporal_split,
    windows,
)


def _write_csv(path, rows, header="timestamp,value,label"):
    path.write_text(header + "\n" + "\n".join(rows) + "\n")


def test_load_csv_with_labels(tmp_path):
    p = tmp_path / "a.csv"
    _write_csv(p, ["0,1,0", "1,2,1", "2,3,0"])
    s = load_csv(p, label_column="label")
    assert len(s) == 3
    assert np.array_equal(s.labels, [0, 1, 0])
    assert s.series_id == "a"


def test_load_csv_forward_fills_non_finite(tmp_path):
    p = tmp_path / "b.csv"
    _write_csv(p, ["0,5,0", "1,NaN,0", "2,7,0"])
    s = load_csv(p)
    assert np.array_equal(s.values, [5.0, 5.0, 7.0])


def test_load_csv_leading_non_finite_takes_first_finite(tmp_path):
    p = tmp_path / "c.csv"
    _write_csv(p, ["0,,0", "1,4,0", "2,5,0"])
    s = load_csv(p)
    assert np.array_equal(s.values, [4.0, 4.0, 5.0])


def test_load_csv_missing_column(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("timestamp,value\n0,1\n")
    with pytest.raises(MissingColumn):
        load_csv(p, label_column="label")


def test_load_csv_bad_value_reports_row(tmp_path):
    p = tmp_path / "e.csv"
    _write_csv(p, ["0,1,0", "1,oops,0"])
    with pytest.raises(ParseError) as err:
        load_csv(p)
    assert err.value.row == 1


def test_load_csv_empty_file(tmp_path):
    p = tmp_path / "f.csv"
    p.write_text("timestamp,value,label\n")
    with pytest.raises(EmptyFile):
        load_csv(p)


def test_load_jsonl(tmp_path):
    p = tmp_path / "g.jsonl"
    rows = [{"timestamp": i, "value": float(i), "label": i % 2}
            for i in range(4)]
    p.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
    s = load_jsonl(p)
    assert np.array_equal(s.values, [0.0, 1.0, 2.0, 3.0])
    assert np.array_equal(s.labels, [0, 1, 0, 1])


def test_load_dataset_directory_sorted_and_sniffs_labels(tmp_path):
    _write_csv(tmp_path / "b.csv", ["0,1,0", "1,2,1"])
    _write_csv(tmp_path / "a.csv", ["0,3,0", "1,4,0"])
    ds = load_dataset(tmp_path)
    assert [s.series_id for s in ds.series] == ["a", "b"]
    assert ds.series[0].labels is not None
    assert np.array_equal(ds.series[1].labels, [0, 1])


def test_load_dataset_missing_path():
    with pytest.raises(MissingInput):
        load_dataset("/no/such/path")


def test_temporal_split_lengths():
    s = Series(values=np.arange(10.0), labels=np.zeros(10, dtype=int))
    train, test = temporal_split(s, 0.5)
    assert (len(train), len(test)) == (5, 5)
    assert np.array_equal(np.concatenate([train.values, test.values]),
                          s.values)


def test_temporal_split_floor_rule():
    s = Series(values=np.arange(7.0))
    train, test = temporal_split(s, 0.5)
    assert (len(train), len(test)) == (3, 4)


def test_temporal_split_degenerate():
    s = Series(values=np.arange(10.0))
    with pytest.raises(DegenerateSplit):
        temporal_split(s, 0.05)


def test_windows_exact_fit():
    offsets = [o for o, _ in windows(np.zeros(800), WindowPlan(400, 400))]
    assert offsets == [0, 400]


def test_windows_short_tail_merges_backward():
    got = windows(np.zeros(850), WindowPlan(400, 400))
    assert [o for o, _ in got] == [0, 400]
    assert got[1][1].size == 450


def test_windows_single_short_series():
    got = windows(np.zeros(300), WindowPlan(400, 400))
    assert len(got) == 1 and got[0][1].size == 300


def test_windows_cover_series_exactly_once():
    rng = np.random.default_rng(3)
    for _ in range(100):
        n = int(rng.integers(1, 2000))
        w = int(rng.integers(1, 500))
        got = windows(np.arange(float(n)), WindowPlan(w, w))
        covered = np.concatenate([vals for _, vals in got])
        assert np.array_equal(covered, np.arange(float(n)))
        offs = [o for o, _ in got]
        assert offs == sorted(set(offs))


def test_window_plan_validation():
    with pytest.raises(ValueError):
        WindowPlan(window=0, stride=1)
    with pytest.raises(ValueError):
        WindowPlan(window=10, stride=11)
