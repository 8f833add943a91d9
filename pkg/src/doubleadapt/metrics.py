"""Cross-sectional ranking metrics and the shift-degree partition."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .engine import ParamSet, Tensor, mse, sgd_step
from .models import ForecastModel

log = logging.getLogger(__name__)


def _pearson(a: Tensor, b: Tensor) -> float | None:
    a = np.asarray(a, dtype=np.float64) - np.mean(a)
    b = np.asarray(b, dtype=np.float64) - np.mean(b)
    denom = math.sqrt(float(a @ a) * float(b @ b))
    if denom == 0.0 or not math.isfinite(denom):
        return None
    return float(np.clip(float(a @ b) / denom, -1.0, 1.0))


def midranks(x: Tensor) -> Tensor:
    """1-based ranks with ties sharing their average rank."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="mergesort")
    sorted_x = x[order]
    # boundaries of runs of equal values
    starts = np.flatnonzero(np.r_[True, sorted_x[1:] != sorted_x[:-1]])
    ends = np.r_[starts[1:], len(x)]
    ranks = np.empty(len(x))
    for s, e in zip(starts, ends):
        ranks[order[s:e]] = 0.5 * (s + e - 1) + 1.0
    return ranks


def ic_per_date(predictions: Tensor, labels: Tensor) -> float | None:
    """Pearson correlation across one date's cross-section; None when undefined."""
    if len(predictions) != len(labels) or len(labels) < 2:
        raise ValueError("need two equal-length vectors with at least 2 entries")
    ic = _pearson(predictions, labels)
    if ic is None:
        log.warning(json.dumps({"warning": "constant_cross_section", "n": len(labels)}))
    return ic


def rank_ic_per_date(predictions: Tensor, labels: Tensor) -> float | None:
    if len(predictions) != len(labels) or len(labels) < 2:
        raise ValueError("need two equal-length vectors with at least 2 entries")
    ic = _pearson(midranks(predictions), midranks(labels))
    if ic is None:
        log.warning(json.dumps({"warning": "constant_cross_section", "n": len(labels)}))
    return ic


@dataclass
class MetricsSummary:
    ic_mean: float
    icir: float | None
    rank_ic_mean: float
    rank_icir: float | None
    ic_series: list = field(default_factory=list)
    rank_ic_series: list = field(default_factory=list)
    n_dates: int = 0

    def row(self) -> dict:
        return {"ic": self.ic_mean, "icir": self.icir, "rank_ic": self.rank_ic_mean,
                "rank_icir": self.rank_icir, "n_dates": self.n_dates}


def _mean_ir(series: Sequence[float | None]) -> tuple[float, float | None]:
    vals = np.array([v for v in series if v is not None], dtype=np.float64)
    if vals.size == 0:
        raise ValueError("no valid dates to summarize")
    if np.ptp(vals) == 0:
        # constant series: exact mean, no dispersion
        return float(vals[0]), None
    mean = float(vals.mean())
    std = float(vals.std())
    return mean, (mean / std if std > 0 else None)


def summarize(ic_series: Sequence[float | None], rank_ic_series: Sequence[float | None] | None = None) -> MetricsSummary:
    """Means over valid dates; information ratios use the population std across dates."""
    rank_ic_series = ic_series if rank_ic_series is None else rank_ic_series
    ic, icir = _mean_ir(ic_series)
    ric, ricir = _mean_ir(rank_ic_series)
    n = sum(v is not None for v in ic_series)
    return MetricsSummary(ic, icir, ric, ricir, list(ic_series), list(rank_ic_series), n)


def evaluate_predictions(groups: Sequence[tuple[Tensor, Tensor]]) -> MetricsSummary:
    """Summary over (predictions, labels) pairs, one pair per date."""
    ics = [ic_per_date(p, y) for p, y in groups]
    rics = [rank_ic_per_date(p, y) for p, y in groups]
    return summarize(ics, rics)


# --- shift degree -----------------------------------------------------------------------


@dataclass
class ShiftProbe:
    """A naive incremental learner used only to measure how much each task's update helps."""

    model: ForecastModel
    params: ParamSet
    lr: float
    steps: int = 1


def shift_degree(probe: ShiftProbe, X_train: Tensor, y_train: Tensor, X_test: Tensor, y_test: Tensor) -> float:
    """Test MSE after the incremental update minus test MSE before it; the probe keeps the update."""
    before = mse(probe.model.predict(probe.params, X_test), y_test)
    for _ in range(probe.steps):
        _, grads = probe.model.loss_and_grads(probe.params, X_train, y_train)
        probe.params = sgd_step(probe.params, grads, probe.lr)
    after = mse(probe.model.predict(probe.params, X_test), y_test)
    return after - before


@dataclass
class ShiftPartition:
    task_ids: list
    delta: list
    gradual: list
    abrupt: list
    middle: list

    def stratum_of(self, task_id) -> str:
        if task_id in self.gradual:
            return "gradual"
        if task_id in self.abrupt:
            return "abrupt"
        return "middle"


def partition_by_shift(delta: Sequence[float], task_ids: Sequence | None = None) -> ShiftPartition:
    """Lowest quarter of shift degrees is gradual, highest quarter abrupt; ties keep task order."""
    task_ids = list(range(len(delta))) if task_ids is None else list(task_ids)
    order = sorted(range(len(delta)), key=lambda i: (delta[i], i))
    q = len(delta) // 4
    gradual = [task_ids[i] for i in order[:q]]
    abrupt = [task_ids[i] for i in order[len(order) - q:]] if q else []
    middle = [task_ids[i] for i in order[q: len(order) - q]]
    return ShiftPartition(task_ids, list(delta), gradual, abrupt, middle)
