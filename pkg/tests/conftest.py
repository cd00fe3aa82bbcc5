import numpy as np
import pytest

from dynsl.data import Dataset, LongitudinalMeasurement, SubjectRecord


def make_dataset(times, events, baseline=None, measurements=(), biomarker_names=("y",)):
    """Toy Dataset builder: ids s0, s1, ... and optional (id, biomarker, time, value) tuples."""
    times = np.asarray(times, dtype=float)
    events = np.asarray(events, dtype=bool)
    baseline = baseline if baseline is not None else [{} for _ in times]
    subjects = [
        SubjectRecord(subject_id=f"s{i}", baseline=dict(baseline[i]), observed_time=float(times[i]), event=bool(events[i]))
        for i in range(len(times))
    ]
    ms = [LongitudinalMeasurement(subject_id=sid, biomarker=b, time=float(t), value=float(v)) for sid, b, t, v in measurements]
    return Dataset(subjects, ms, biomarker_names=biomarker_names)


@pytest.fixture
def toy_two_subject():
    # risk set at t=2: censored at 4, event at 6
    return make_dataset([4.0, 6.0], [False, True])


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
