import numpy as np
import pytest

from dynsl.data import (
    CsvSchema,
    Dataset,
    LongitudinalMeasurement,
    PredictionWindow,
    SubjectRecord,
    load_dataset,
    risk_set,
    stratified_folds,
    write_dataset,
)
from dynsl.exceptions import ConfigurationError, DomainError, ParseError, ReferentialError, SchemaError

from conftest import make_dataset


def write_files(tmp_path, baseline_rows, longitudinal_rows):
    b = tmp_path / "baseline.csv"
    m = tmp_path / "long.csv"
    b.write_text("\n".join(baseline_rows) + "\n")
    m.write_text("\n".join(longitudinal_rows) + "\n")
    return b, m


def test_load_round_trip_toy(tmp_path):
    b, m = write_files(
        tmp_path,
        ["id,event_time,event,age", "a,5.0,1,63", "b,7.5,0,55"],
        ["id,biomarker,time,value", "a,bili,0.0,1.2", "a,bili,2.0,1.9", "b,bili,1.0,0.7"],
    )
    ds = load_dataset(b, m)
    assert ds.n == 2
    assert ds.n_biomarkers == 1
    assert ds.biomarker_names == ("bili",)
    assert ds.baseline_names == ("age",)
    assert np.allclose(ds.times, [5.0, 7.5])
    assert list(ds.events) == [True, False]
    t, v = ds.history(0, 0)
    assert np.allclose(t, [0.0, 2.0]) and np.allclose(v, [1.2, 1.9])


def test_load_measurement_after_event_time_is_referential_error(tmp_path):
    b, m = write_files(
        tmp_path,
        ["id,event_time,event", "a,5.0,1"],
        ["id,biomarker,time,value", "a,bili,7.0,1.2"],
    )
    with pytest.raises(ReferentialError, match="row 1"):
        load_dataset(b, m)


def test_load_unknown_subject(tmp_path):
    b, m = write_files(
        tmp_path,
        ["id,event_time,event", "a,5.0,1"],
        ["id,biomarker,time,value", "zz,bili,1.0,1.2"],
    )
    with pytest.raises(ReferentialError, match="'zz'"):
        load_dataset(b, m)


def test_load_missing_column(tmp_path):
    b, m = write_files(
        tmp_path,
        ["id,when,event", "a,5.0,1"],
        ["id,biomarker,time,value"],
    )
    with pytest.raises(SchemaError, match="event_time"):
        load_dataset(b, m)


def test_load_non_numeric_reports_row(tmp_path):
    b, m = write_files(
        tmp_path,
        ["id,event_time,event", "a,5.0,1", "b,oops,0"],
        ["id,biomarker,time,value"],
    )
    with pytest.raises(ParseError, match="row 2"):
        load_dataset(b, m)


def test_missing_baseline_covariate_reads_as_nan(tmp_path):
    b, m = write_files(
        tmp_path,
        ["id,event_time,event,age", "a,5.0,1,", "b,3.0,0,41"],
        ["id,biomarker,time,value", "a,bili,1.0,2.0"],
    )
    ds = load_dataset(b, m)
    assert np.isnan(ds.baseline_matrix[0, 0])
    assert ds.baseline_matrix[1, 0] == 41


def test_write_then_read_identity(tmp_path, rng):
    n = 40
    times = rng.exponential(5.0, n) + 0.5
    events = rng.random(n) < 0.6
    baseline = [{"age": float(rng.normal(50, 10)), "sex": float(rng.integers(0, 2))} for _ in range(n)]
    measurements = []
    for i in range(n):
        for t in np.sort(rng.uniform(0, times[i], 4)):
            measurements.append((f"s{i}", "y", float(t), float(rng.normal())))
    ds = make_dataset(times, events, baseline, measurements)
    b, m = tmp_path / "b.csv", tmp_path / "m.csv"
    write_dataset(ds, b, m)
    back = load_dataset(b, m)
    assert back.subject_ids == ds.subject_ids
    assert back.baseline_names == ds.baseline_names
    assert np.array_equal(back.times, ds.times)
    assert np.array_equal(back.events, ds.events)
    assert np.array_equal(back.baseline_matrix, ds.baseline_matrix)
    assert back.measurements == ds.measurements


def test_dataset_rejects_mismatched_baselines():
    a = SubjectRecord("a", {"x": 1.0}, 2.0, True)
    b = SubjectRecord("b", {"z": 1.0}, 2.0, True)
    with pytest.raises(SchemaError):
        Dataset([a, b], [], biomarker_names=("y",))


def test_dataset_rejects_duplicate_measurement_times():
    a = SubjectRecord("a", {}, 5.0, True)
    ms = [
        LongitudinalMeasurement("a", "y", 1.0, 0.5),
        LongitudinalMeasurement("a", "y", 1.0, 0.7),
    ]
    with pytest.raises(ReferentialError, match="duplicate"):
        Dataset([a], ms)


def test_risk_set_basic():
    ds = make_dataset([3.0, 6.0, 9.0], [1, 1, 0])
    rs = risk_set(ds, 5.0)
    assert list(rs.indices) == [1, 2]
    assert rs.subject_ids == ("s1", "s2")
    rs0 = risk_set(ds, 0.0)
    assert rs0.n == 3


def test_risk_set_monotone(rng):
    times = rng.exponential(4.0, 200)
    ds = make_dataset(times, rng.random(200) < 0.5)
    grid = np.sort(rng.uniform(0, 8, 10))
    prev = set(risk_set(ds, grid[0]).indices.tolist())
    for t in grid[1:]:
        cur = set(risk_set(ds, t).indices.tolist())
        assert cur <= prev
        prev = cur


def test_risk_set_matches_linear_scan(rng):
    times = rng.exponential(4.0, 625)
    ds = make_dataset(times, rng.random(625) < 0.5)
    t = 2.5
    assert risk_set(ds, t).n == sum(1 for x in times if x > t)


def test_stratified_folds_exact_balance():
    # 10 subjects, 4 in-window events for window (1, 5]
    times = [2.0, 3.0, 4.0, 4.5, 6.0, 7.0, 0.5, 8.0, 9.0, 10.0]
    events = [1, 1, 1, 1, 0, 0, 1, 0, 1, 0]
    ds = make_dataset(times, events)
    w = PredictionWindow(1.0, 5.0)
    fa = stratified_folds(ds, w, 2, seed=7)
    in_window = (ds.times > 1.0) & (ds.times <= 5.0) & ds.events
    for v in range(2):
        assert int(np.sum(in_window & (fa.folds == v))) == 2


def test_stratified_folds_too_few_events():
    times = [2.0, 3.0, 4.0, 4.5, 6.0, 7.0, 8.0]
    events = [1, 1, 1, 1, 0, 0, 0]
    ds = make_dataset(times, events)
    with pytest.raises(ConfigurationError, match="folds"):
        stratified_folds(ds, PredictionWindow(1.0, 5.0), 7, seed=1)


def test_stratified_folds_deterministic(rng):
    times = rng.exponential(6.0, 100) + 0.1
    events = rng.random(100) < 0.5
    ds = make_dataset(times, events)
    w = PredictionWindow(1.0, 6.0)
    a = stratified_folds(ds, w, 5, seed=42)
    b = stratified_folds(ds, w, 5, seed=42)
    assert a.fold_of == b.fold_of
    c = stratified_folds(ds, w, 5, seed=43)
    assert a.fold_of != c.fold_of


def test_stratified_folds_partition_and_balance_random(rng):
    for _ in range(100):
        n = int(rng.integers(20, 80))
        times = rng.exponential(5.0, n) + 0.05
        events = rng.random(n) < 0.6
        ds = make_dataset(times, events)
        w = PredictionWindow(0.5, 4.0)
        in_window = (ds.times > w.t) & (ds.times <= w.u) & ds.events
        V = int(rng.integers(2, 5))
        if int(in_window.sum()) < V or risk_set(ds, w.t).n == 0:
            continue
        fa = stratified_folds(ds, w, V, seed=int(rng.integers(1 << 30)))
        assert sorted(fa.fold_of) == sorted(ds.subject_ids)  # every subject exactly once
        counts = [int(np.sum(in_window & (fa.folds == v))) for v in range(V)]
        assert max(counts) - min(counts) <= 1


def test_window_validation():
    with pytest.raises(DomainError):
        PredictionWindow(5.0, 5.0)
    with pytest.raises(DomainError):
        PredictionWindow(-1.0, 5.0)
    assert PredictionWindow(2.0, 6.0).midpoint == 4.0


def test_subset_keeps_alignment():
    ds = make_dataset(
        [3.0, 6.0, 9.0],
        [1, 0, 1],
        measurements=[("s0", "y", 1.0, 5.0), ("s1", "y", 2.0, 7.0), ("s2", "y", 3.0, 9.0)],
    )
    sub = ds.subset([2, 0])
    assert sub.subject_ids == ("s2", "s0")
    t, v = sub.history(0, 0)
    assert v[0] == 9.0
