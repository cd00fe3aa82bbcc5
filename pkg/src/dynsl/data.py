"""Longitudinal + time-to-event data model.

A :class:`Dataset` couples one row per subject (baseline covariates,
observed time, event indicator) with irregularly sampled biomarker
measurements in long format.  Everything downstream (risk sets, losses,
learners) reads from this immutable container.

File format: two delimited text files with a header row.  The baseline
file has one row per subject (id, event time, event indicator, then
covariate columns); the longitudinal file is long format (id, biomarker,
time, value).  Empty baseline covariate fields are read as NaN.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigurationError, DomainError, ParseError, ReferentialError, SchemaError

__all__ = [
    "SubjectRecord",
    "LongitudinalMeasurement",
    "Dataset",
    "PredictionWindow",
    "FoldAssignment",
    "RiskSet",
    "CsvSchema",
    "load_dataset",
    "write_dataset",
    "risk_set",
    "stratified_folds",
]


@dataclass(frozen=True)
class SubjectRecord:
    """One subject: identifier, named baseline covariates, observed time, event flag."""

    subject_id: str
    baseline: dict
    observed_time: float
    event: bool

    def __post_init__(self):
        t = float(self.observed_time)
        if not np.isfinite(t) or t < 0:
            raise DomainError(f"subject {self.subject_id!r}: observed_time must be finite and >= 0, got {t}")


@dataclass(frozen=True)
class LongitudinalMeasurement:
    """One biomarker measurement for one subject."""

    subject_id: str
    biomarker: str
    time: float
    value: float


@dataclass(frozen=True)
class PredictionWindow:
    """Landmark time ``t`` and horizon ``u`` with ``0 <= t < u``."""

    t: float
    u: float

    def __post_init__(self):
        if not (np.isfinite(self.t) and np.isfinite(self.u)):
            raise DomainError(f"window bounds must be finite, got ({self.t}, {self.u})")
        if not (0 <= self.t < self.u):
            raise DomainError(f"window requires 0 <= t < u, got ({self.t}, {self.u})")

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.t + self.u)


class Dataset:
    """Immutable container of subjects and their longitudinal measurements.

    Parameters
    ----------
    subjects : sequence of SubjectRecord
        Baseline covariate names must be identical (same names, same
        order) across subjects.
    measurements : sequence of LongitudinalMeasurement
        Sorted internally by (subject, biomarker, time).  Duplicate times
        within a (subject, biomarker) pair are rejected, as are
        measurements after the subject's observed time.
    biomarker_names : sequence of str, optional
        Defaults to the sorted set of biomarker labels present in
        ``measurements``.  Supply explicitly when some biomarker has no
        measurements at all.
    """

    def __init__(self, subjects, measurements, biomarker_names=None):
        subjects = tuple(subjects)
        if len(subjects) == 0:
            raise DomainError("a Dataset needs at least one subject")
        names = tuple(subjects[0].baseline.keys())
        for s in subjects:
            if tuple(s.baseline.keys()) != names:
                raise SchemaError(
                    f"subject {s.subject_id!r} has baseline covariates {tuple(s.baseline)}, expected {names}"
                )
        ids = [s.subject_id for s in subjects]
        if len(set(ids)) != len(ids):
            raise ReferentialError("duplicate subject ids in baseline records")

        self.subjects = subjects
        self.baseline_names = names
        self.subject_ids = tuple(ids)
        self._index = {sid: i for i, sid in enumerate(ids)}
        self.times = np.array([s.observed_time for s in subjects], dtype=float)
        self.events = np.array([s.event for s in subjects], dtype=bool)
        self.baseline_matrix = np.array(
            [[float(s.baseline[name]) for name in names] for s in subjects], dtype=float
        ).reshape(len(subjects), len(names))
        self.times.flags.writeable = False
        self.events.flags.writeable = False
        self.baseline_matrix.flags.writeable = False

        measurements = list(measurements)
        for m in measurements:
            if m.subject_id not in self._index:
                raise ReferentialError(f"measurement references unknown subject {m.subject_id!r}")
        if biomarker_names is None:
            biomarker_names = sorted({m.biomarker for m in measurements})
        self.biomarker_names = tuple(biomarker_names)
        biom_index = {b: j for j, b in enumerate(self.biomarker_names)}
        if len(biom_index) == 0:
            raise DomainError("a Dataset needs at least one biomarker name")
        for m in measurements:
            if m.biomarker not in biom_index:
                raise ReferentialError(f"measurement references unknown biomarker {m.biomarker!r}")
            if m.time > self.times[self._index[m.subject_id]]:
                raise ReferentialError(
                    f"measurement for subject {m.subject_id!r} at time {m.time} is after its "
                    f"observed time {self.times[self._index[m.subject_id]]}"
                )
            if not (np.isfinite(m.time) and m.time >= 0):
                raise DomainError(f"measurement time must be finite and >= 0, got {m.time}")

        order = sorted(
            range(len(measurements)),
            key=lambda k: (
                self._index[measurements[k].subject_id],
                biom_index[measurements[k].biomarker],
                measurements[k].time,
            ),
        )
        self.measurements = tuple(measurements[k] for k in order)
        self._m_subj = np.array([self._index[m.subject_id] for m in self.measurements], dtype=np.intp)
        self._m_biom = np.array([biom_index[m.biomarker] for m in self.measurements], dtype=np.intp)
        self._m_time = np.array([m.time for m in self.measurements], dtype=float)
        self._m_value = np.array([m.value for m in self.measurements], dtype=float)
        for a in (self._m_subj, self._m_biom, self._m_time, self._m_value):
            a.flags.writeable = False

        # start/stop offsets of each (subject, biomarker) run in the sorted arrays
        n, M = len(subjects), len(self.biomarker_names)
        key = self._m_subj * M + self._m_biom
        self._m_start = np.searchsorted(key, np.arange(n * M), side="left")
        self._m_stop = np.searchsorted(key, np.arange(n * M), side="right")
        same_run = key[:-1] == key[1:]
        not_increasing = self._m_time[:-1] >= self._m_time[1:]
        bad = np.flatnonzero(same_run & not_increasing)
        if bad.size:
            m = self.measurements[bad[0] + 1]
            raise ReferentialError(
                f"duplicate measurement time {m.time} for subject {m.subject_id!r}, biomarker {m.biomarker!r}"
            )

    # -- basic accessors -------------------------------------------------

    @property
    def n(self) -> int:
        return len(self.subjects)

    @property
    def n_biomarkers(self) -> int:
        return len(self.biomarker_names)

    def index_of(self, subject_id) -> int:
        return self._index[subject_id]

    def history(self, subject_index: int, biomarker_index: int, t_max=None):
        """Measurement (times, values) of one subject/biomarker, optionally truncated to ``time <= t_max``."""
        k = subject_index * self.n_biomarkers + biomarker_index
        lo, hi = self._m_start[k], self._m_stop[k]
        times = self._m_time[lo:hi]
        values = self._m_value[lo:hi]
        if t_max is not None:
            keep = np.searchsorted(times, t_max, side="right")
            times, values = times[:keep], values[:keep]
        return times, values

    def last_value_at(self, subject_index: int, biomarker_index: int, t: float):
        """Last measured value at or before ``t``, or None if no such measurement."""
        times, values = self.history(subject_index, biomarker_index, t_max=t)
        if len(values) == 0:
            return None
        return float(values[-1])

    def subset(self, indices) -> "Dataset":
        """New Dataset restricted to the given subject indices (order preserved)."""
        indices = np.asarray(indices, dtype=np.intp)
        keep_ids = {self.subject_ids[i] for i in indices}
        subjects = [self.subjects[i] for i in indices]
        measurements = [m for m in self.measurements if m.subject_id in keep_ids]
        return Dataset(subjects, measurements, biomarker_names=self.biomarker_names)


@dataclass(frozen=True)
class RiskSet:
    """Subjects still event-free and uncensored just after the landmark."""

    indices: np.ndarray
    subject_ids: tuple
    t: float

    @property
    def n(self) -> int:
        return len(self.indices)


def risk_set(data: Dataset, t: float) -> RiskSet:
    """Subjects with observed time strictly greater than ``t``, original order kept."""
    if t < 0:
        raise DomainError(f"landmark time must be >= 0, got {t}")
    idx = np.flatnonzero(data.times > t)
    return RiskSet(indices=idx, subject_ids=tuple(data.subject_ids[i] for i in idx), t=float(t))


@dataclass(frozen=True)
class FoldAssignment:
    """Event-stratified fold labels for every subject."""

    fold_of: dict
    n_folds: int
    seed: int
    folds: np.ndarray = field(repr=False)  # aligned with Dataset order

    def training_indices(self, v: int) -> np.ndarray:
        return np.flatnonzero(self.folds != v)

    def heldout_indices(self, v: int) -> np.ndarray:
        return np.flatnonzero(self.folds == v)


def in_window_event_mask(data: Dataset, window: PredictionWindow) -> np.ndarray:
    """Boolean mask over subjects: event observed inside ``(t, u]``."""
    return (data.times > window.t) & (data.times <= window.u) & data.events


def stratified_folds(data: Dataset, window: PredictionWindow, n_folds: int, seed: int) -> FoldAssignment:
    """Assign every subject a fold, balancing in-window events across folds.

    Subjects in the risk set at ``window.t`` with an event in ``(t, u]``
    are shuffled and dealt round-robin; all remaining subjects are dealt
    the same way from a second shuffled pile.  Per-fold in-window event
    counts therefore differ by at most one.  Deterministic given ``seed``.
    """
    if n_folds < 2:
        raise ConfigurationError(f"need at least 2 folds, got {n_folds}")
    rs = risk_set(data, window.t)
    if rs.n == 0:
        raise ConfigurationError(f"risk set at t={window.t} is empty")
    strata = in_window_event_mask(data, window)
    n_events = int(strata.sum())
    if n_events < n_folds:
        raise ConfigurationError(
            f"only {n_events} in-window events for {n_folds} folds; choose at most {max(n_events, 2)} folds "
            "so every fold holds at least one event"
        )
    rng = np.random.default_rng(seed)
    folds = np.empty(data.n, dtype=np.intp)
    for mask in (strata, ~strata):
        members = np.flatnonzero(mask)
        rng.shuffle(members)
        folds[members] = np.arange(len(members)) % n_folds
    fold_of = {sid: int(folds[i]) for i, sid in enumerate(data.subject_ids)}
    folds.flags.writeable = False
    return FoldAssignment(fold_of=fold_of, n_folds=n_folds, seed=int(seed), folds=folds)


# -- flat-file ingestion ------------------------------------------------


@dataclass(frozen=True)
class CsvSchema:
    """Column-name mapping for the two input files."""

    id: str = "id"
    event_time: str = "event_time"
    event: str = "event"
    biomarker: str = "biomarker"
    time: str = "time"
    value: str = "value"


def _read_rows(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        rows = list(reader)
    if not rows:
        raise SchemaError(f"{path}: file is empty")
    return rows[0], rows[1:]


def _require_columns(header, needed, path):
    missing = [c for c in needed if c not in header]
    if missing:
        raise SchemaError(f"{path}: missing column(s) {', '.join(repr(c) for c in missing)}")
    return {c: header.index(c) for c in header}


def _parse_float(cell, path, row_number, column, allow_empty=False):
    cell = cell.strip()
    if cell == "":
        if allow_empty:
            return float("nan")
        raise ParseError(f"{path}, row {row_number}: column {column!r} is empty")
    try:
        return float(cell)
    except ValueError:
        raise ParseError(f"{path}, row {row_number}: column {column!r} has non-numeric value {cell!r}") from None


def load_dataset(baseline_path, longitudinal_path, schema: CsvSchema = CsvSchema()) -> Dataset:
    """Read the two delimited files into a validated :class:`Dataset`.

    Raises
    ------
    SchemaError
        A named column is absent.
    ParseError
        A numeric cell fails to parse (message carries the data row number,
        counted from 1 below the header).
    ReferentialError
        A measurement references an unknown subject or lies after the
        subject's observed time (the offending row is named).
    """
    header, rows = _read_rows(baseline_path)
    cols = _require_columns(header, [schema.id, schema.event_time, schema.event], baseline_path)
    covariate_cols = [c for c in header if c not in (schema.id, schema.event_time, schema.event)]
    subjects = []
    for r, row in enumerate(rows, start=1):
        if len(row) != len(header):
            raise ParseError(f"{baseline_path}, row {r}: expected {len(header)} fields, got {len(row)}")
        sid = row[cols[schema.id]].strip()
        t = _parse_float(row[cols[schema.event_time]], baseline_path, r, schema.event_time)
        ev = _parse_float(row[cols[schema.event]], baseline_path, r, schema.event)
        if ev not in (0.0, 1.0):
            raise ParseError(f"{baseline_path}, row {r}: column {schema.event!r} must be 0 or 1, got {row[cols[schema.event]]!r}")
        baseline = {
            c: _parse_float(row[cols[c]], baseline_path, r, c, allow_empty=True) for c in covariate_cols
        }
        subjects.append(SubjectRecord(subject_id=sid, baseline=baseline, observed_time=t, event=bool(ev)))

    known = {s.subject_id: s.observed_time for s in subjects}
    header, rows = _read_rows(longitudinal_path)
    cols = _require_columns(header, [schema.id, schema.biomarker, schema.time, schema.value], longitudinal_path)
    measurements = []
    for r, row in enumerate(rows, start=1):
        if len(row) != len(header):
            raise ParseError(f"{longitudinal_path}, row {r}: expected {len(header)} fields, got {len(row)}")
        sid = row[cols[schema.id]].strip()
        if sid not in known:
            raise ReferentialError(f"{longitudinal_path}, row {r}: measurement for unknown subject {sid!r}")
        t = _parse_float(row[cols[schema.time]], longitudinal_path, r, schema.time)
        v = _parse_float(row[cols[schema.value]], longitudinal_path, r, schema.value)
        if t > known[sid]:
            raise ReferentialError(
                f"{longitudinal_path}, row {r}: measurement at time {t} is after subject "
                f"{sid!r}'s observed time {known[sid]}"
            )
        measurements.append(
            LongitudinalMeasurement(subject_id=sid, biomarker=row[cols[schema.biomarker]].strip(), time=t, value=v)
        )
    return Dataset(subjects, measurements)


def _format_value(x) -> str:
    if isinstance(x, float) and np.isnan(x):
        return ""
    return repr(float(x))


def write_dataset(data: Dataset, baseline_path, longitudinal_path, schema: CsvSchema = CsvSchema()) -> None:
    """Write ``data`` back to the two-file format read by :func:`load_dataset`.

    Floats are written with ``repr`` so a load/write/load cycle is exact.
    """
    with open(baseline_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([schema.id, schema.event_time, schema.event, *data.baseline_names])
        for s in data.subjects:
            writer.writerow(
                [s.subject_id, repr(float(s.observed_time)), int(s.event)]
                + [_format_value(s.baseline[c]) for c in data.baseline_names]
            )
    with open(longitudinal_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([schema.id, schema.biomarker, schema.time, schema.value])
        for m in data.measurements:
            writer.writerow([m.subject_id, m.biomarker, repr(float(m.time)), repr(float(m.value))])
