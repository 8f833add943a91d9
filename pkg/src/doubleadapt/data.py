"""Stream ingestion, normalization and rolling task schedules."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .engine import Tensor

log = logging.getLogger(__name__)


class IngestionError(ValueError):
    pass


class ScheduleError(ValueError):
    pass


class DataError(ValueError):
    pass


def _warn(records: list, kind: str, **fields) -> None:
    rec = {"warning": kind, **fields}
    records.append(rec)
    log.warning(json.dumps(rec, sort_keys=True))


@dataclass(frozen=True)
class Sample:
    date_index: int
    instrument_id: str
    features: Tensor
    label: float


@dataclass(frozen=True)
class DateSlice:
    """All instruments observed at one date, stored as arrays."""

    date_index: int
    instruments: tuple[str, ...]
    X: Tensor
    y: Tensor

    def __post_init__(self):
        if len(self.instruments) == 0:
            raise DataError(f"date {self.date_index} has no samples")
        if len(set(self.instruments)) != len(self.instruments):
            raise DataError(f"duplicate instrument at date {self.date_index}")

    @property
    def samples(self) -> list[Sample]:
        return [Sample(self.date_index, inst, self.X[i], float(self.y[i])) for i, inst in enumerate(self.instruments)]

    def __len__(self) -> int:
        return len(self.instruments)


@dataclass(frozen=True)
class Moments:
    mean: Tensor
    std: Tensor
    train_end: int


@dataclass(frozen=True)
class StreamDataset:
    slices: tuple[DateSlice, ...]
    feature_dim: int
    date_labels: tuple[str, ...] = ()
    feature_moments: Moments | None = None
    warnings: tuple = ()

    def __post_init__(self):
        idx = [s.date_index for s in self.slices]
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise DataError("date indices must be strictly increasing")
        for s in self.slices:
            if s.X.ndim != 2 or s.X.shape[1] != self.feature_dim:
                raise DataError(f"date {s.date_index}: features do not have dimension {self.feature_dim}")
        if not self.date_labels:
            object.__setattr__(self, "date_labels", tuple(str(i) for i in idx))

    def __len__(self) -> int:
        return len(self.slices)

    @property
    def n_dates(self) -> int:
        return len(self.slices)

    def date_label(self, pos: int) -> str:
        return self.date_labels[pos]

    def position_of(self, date: int | str) -> int:
        """Position of the last date at or before ``date`` (an index or a date label)."""
        if isinstance(date, str) and not date.lstrip("-").isdigit():
            pos = [i for i, lab in enumerate(self.date_labels) if lab <= date]
        else:
            pos = [i for i, s in enumerate(self.slices) if s.date_index <= int(date)]
        if not pos:
            raise ScheduleError(f"no dates at or before {date!r}")
        return pos[-1]


# --- ingestion ----------------------------------------------------------------


def _is_int(text: str) -> bool:
    return text.strip().lstrip("-").isdigit()


def load_csv(path: str | Path) -> StreamDataset:
    """Read ``date,instrument,f0..f{D-1},label`` (or ``...,price``) rows.

    Lines starting with ``#`` before the header are metadata and skipped. In price
    mode the label of each (date, instrument) is the next-date change rate.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        lines = [ln for ln in fh]
    body_start = 0
    while body_start < len(lines) and lines[body_start].startswith("#"):
        body_start += 1
    reader = csv.reader(lines[body_start:])
    header = next(reader, None)
    if not header:
        raise IngestionError(f"{path}: empty file")
    header = [h.strip() for h in header]
    if header[:2] != ["date", "instrument"]:
        raise IngestionError(f"{path}: missing column: header must start with date,instrument")
    target = header[-1]
    if target not in ("label", "price"):
        raise IngestionError(f"{path}: missing column: last column must be 'label' or 'price'")
    feat_cols = header[2:-1]
    for j, name in enumerate(feat_cols):
        if name != f"f{j}":
            raise IngestionError(f"{path}: unexpected column {name!r}, expected f{j}")
    D = len(feat_cols)

    rows: dict[str, dict[str, tuple[list[float], float]]] = {}
    seen: set[tuple[str, str]] = set()
    for line_no, row in enumerate(reader, start=body_start + 2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise IngestionError(f"row {line_no}: expected {len(header)} fields, got {len(row)}")
        date, inst = row[0].strip(), row[1].strip()
        try:
            values = [float(c) for c in row[2:]]
        except ValueError:
            raise IngestionError(f"row {line_no}: non-numeric value") from None
        if not all(math.isfinite(v) for v in values):
            raise IngestionError(f"row {line_no}: non-finite value")
        if (date, inst) in seen:
            raise IngestionError(f"row {line_no}: duplicate (date, instrument) pair ({date}, {inst})")
        seen.add((date, inst))
        rows.setdefault(date, {})[inst] = (values[:-1], values[-1])
    if not rows:
        raise IngestionError(f"{path}: no data rows")

    if all(_is_int(d) for d in rows):
        dates = sorted(rows, key=int)
    else:
        dates = sorted(rows)

    if target == "price":
        return _from_prices(rows, dates, D)

    slices = []
    for i, d in enumerate(dates):
        insts = sorted(rows[d])
        X = np.array([rows[d][k][0] for k in insts], dtype=np.float64).reshape(len(insts), D)
        y = np.array([rows[d][k][1] for k in insts], dtype=np.float64)
        slices.append(DateSlice(i, tuple(insts), X, y))
    return StreamDataset(tuple(slices), D, tuple(dates))


def label_from_prices(prices: Sequence[float]) -> Tensor:
    """Next-step change rates; the final date has no label."""
    p = np.asarray(prices, dtype=np.float64)
    if p.size < 2:
        raise DataError("need at least two prices")
    if np.any(p <= 0):
        raise DataError("prices must be positive")
    return (p[1:] - p[:-1]) / p[:-1]


def _from_prices(rows, dates, D) -> StreamDataset:
    slices, labels = [], []
    for i, d in enumerate(dates[:-1]):
        nxt = rows[dates[i + 1]]
        insts = sorted(k for k in rows[d] if k in nxt)
        if not insts:
            continue
        X = np.array([rows[d][k][0] for k in insts], dtype=np.float64).reshape(len(insts), D)
        y = np.array([label_from_prices([rows[d][k][1], nxt[k][1]])[0] for k in insts])
        slices.append(DateSlice(len(slices), tuple(insts), X, y))
        labels.append(d)
    if not slices:
        raise IngestionError("price file yields no labelled dates")
    return StreamDataset(tuple(slices), D, tuple(labels))


def write_csv(ds: StreamDataset, path: str | Path, metadata: dict | None = None) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        for key, value in (metadata or {}).items():
            fh.write(f"# {key}={value}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "instrument", *[f"f{j}" for j in range(ds.feature_dim)], "label"])
        for pos, s in enumerate(ds.slices):
            for i, inst in enumerate(s.instruments):
                w.writerow([ds.date_labels[pos], inst, *map(repr, s.X[i].tolist()), repr(float(s.y[i]))])


# --- normalization --------------------------------------------------------------


def feature_moments(ds: StreamDataset, train_end: int) -> Moments:
    """Population mean/std of features over dates with position <= train_end."""
    train = [s.X for s in ds.slices[: train_end + 1]]
    if not train:
        raise DataError("empty training range")
    stacked = np.concatenate(train, axis=0)
    return Moments(stacked.mean(axis=0), stacked.std(axis=0), train_end)


def apply_moments(ds: StreamDataset, moments: Moments) -> StreamDataset:
    """z-score features with stored moments and labels per date with the date's own moments."""
    warnings = list(ds.warnings)
    std = moments.std
    zero = std <= 0
    for j in np.flatnonzero(zero):
        _warn(warnings, "zero_feature_std", dimension=int(j))
    scale = np.where(zero, 1.0, std)
    slices = []
    for s in ds.slices:
        X = (s.X - moments.mean) / scale
        if len(s) < 2:
            _warn(warnings, "single_sample_date", date_index=s.date_index)
            y = s.y.copy()
        else:
            sd = s.y.std()
            y = (s.y - s.y.mean()) / sd if sd > 0 else s.y - s.y.mean()
        slices.append(DateSlice(s.date_index, s.instruments, X, y))
    return StreamDataset(tuple(slices), ds.feature_dim, ds.date_labels,
                         Moments(moments.mean, np.where(zero, 1.0, std), moments.train_end), tuple(warnings))


def normalize(ds: StreamDataset, train_end: int) -> StreamDataset:
    """Normalize once; a dataset that already carries moments is returned as is."""
    if ds.feature_moments is not None:
        return ds
    return apply_moments(ds, feature_moments(ds, train_end))


# --- schedule -------------------------------------------------------------------


@dataclass(frozen=True)
class TaskWindow:
    """One incremental-learning task. Positions index into the owning dataset."""

    k: int
    train_slices: tuple[DateSlice, ...]
    test_slices: tuple[DateSlice, ...]
    train_start: int
    test_start: int

    @staticmethod
    def _stack(slices):
        return np.concatenate([s.X for s in slices]), np.concatenate([s.y for s in slices])

    def train_arrays(self) -> tuple[Tensor, Tensor]:
        return self._stack(self.train_slices)

    def test_features(self) -> Tensor:
        return np.concatenate([s.X for s in self.test_slices])

    def test_labels(self) -> Tensor:
        return np.concatenate([s.y for s in self.test_slices])

    @property
    def test_sizes(self) -> list[int]:
        return [len(s) for s in self.test_slices]

    @property
    def n_train(self) -> int:
        return sum(len(s) for s in self.train_slices)

    @property
    def n_test(self) -> int:
        return sum(len(s) for s in self.test_slices)

    def with_test_labels(self, labels: Tensor) -> "TaskWindow":
        labels = np.asarray(labels, dtype=np.float64)
        out, pos = [], 0
        for s in self.test_slices:
            out.append(DateSlice(s.date_index, s.instruments, s.X, labels[pos : pos + len(s)].copy()))
            pos += len(s)
        return replace(self, test_slices=tuple(out))


@dataclass(frozen=True)
class TaskSchedule:
    r: int
    tasks: tuple[TaskWindow, ...]
    k0: int
    k_valid: int
    train_end: int
    valid_end: int
    warnings: tuple = ()

    @property
    def meta_train(self) -> tuple[TaskWindow, ...]:
        return self.tasks[: self.k0]

    @property
    def meta_valid(self) -> tuple[TaskWindow, ...]:
        return self.tasks[self.k0 : self.k_valid]

    @property
    def meta_test(self) -> tuple[TaskWindow, ...]:
        return self.tasks[self.k_valid :]

    @property
    def online(self) -> tuple[TaskWindow, ...]:
        return self.tasks[self.k0 :]


def build_schedule(ds: StreamDataset, r: int, train_end: int, valid_end: int) -> TaskSchedule:
    """Rolling tasks with stride ``r``: task k trains on positions [(k-1)r, kr) and tests on [kr, (k+1)r).

    ``train_end`` and ``valid_end`` are inclusive date positions. The meta-train split
    holds tasks whose test window ends at or before ``train_end``; meta-valid likewise
    for ``valid_end``; the rest is meta-test.
    """
    if r < 1:
        raise ScheduleError("r must be >= 1")
    if valid_end <= train_end:
        raise ScheduleError(f"valid_end ({valid_end}) must come after train_end ({train_end})")
    n = ds.n_dates
    n_tasks = n // r - 1
    warnings: list = []
    if n % r:
        _warn(warnings, "trailing_dates_dropped", count=n % r)
    tasks = []
    for k in range(1, n_tasks + 1):
        a, b, c = (k - 1) * r, k * r, (k + 1) * r
        tasks.append(TaskWindow(k, ds.slices[a:b], ds.slices[b:c], a, b))
    k0 = sum(1 for k in range(1, n_tasks + 1) if (k + 1) * r - 1 <= train_end)
    kv = sum(1 for k in range(1, n_tasks + 1) if (k + 1) * r - 1 <= valid_end)
    if not 0 < k0 < kv < n_tasks:
        raise ScheduleError(
            f"r={r} leaves an empty split: {n_tasks} tasks, meta-train {k0}, meta-valid {kv - k0}, "
            f"meta-test {n_tasks - kv}")
    return TaskSchedule(r, tuple(tasks), k0, kv, train_end, valid_end, tuple(warnings))


def all_tasks_schedule(ds: StreamDataset, r: int) -> list[TaskWindow]:
    """Every rolling task of the stream, without split validation."""
    n_tasks = ds.n_dates // r - 1
    return [TaskWindow(k, ds.slices[(k - 1) * r : k * r], ds.slices[k * r : (k + 1) * r], (k - 1) * r, k * r)
            for k in range(1, n_tasks + 1)]
