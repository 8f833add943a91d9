"""Task loop, offline meta-training with early stopping, online phase, and baselines."""

from __future__ import annotations

import copy
import logging
import time
import zlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .adapter import DataAdapter
from .data import StreamDataset, TaskSchedule, TaskWindow
from .engine import AdamState, ConfigError, ParamSet, Tensor, adam_step, mse, sgd_step
from .meta import MetaLossBreakdown, MetaOptConfig, meta_gradients, update_data_adapter, update_model_adapter
from .metrics import MetricsSummary, evaluate_predictions
from .model_adapter import ModelAdapterState, lower_level_update
from .models import ForecastModel

log = logging.getLogger(__name__)


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent named generator derived from the run seed."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(name.encode())]))


@dataclass
class TaskReport:
    k: int
    train_loss: float
    breakdown: MetaLossBreakdown | None
    predictions: Tensor
    labels: Tensor
    date_indices: list
    instruments: list
    test_sizes: list
    wall_time: float = 0.0

    def per_date(self) -> list[tuple[Tensor, Tensor]]:
        out, pos = [], 0
        for n in self.test_sizes:
            out.append((self.predictions[pos : pos + n], self.labels[pos : pos + n]))
            pos += n
        return out


def _report(task: TaskWindow, train_loss, breakdown, preds, wall) -> TaskReport:
    dates, insts = [], []
    for s in task.test_slices:
        dates += [s.date_index] * len(s)
        insts += list(s.instruments)
    return TaskReport(task.k, train_loss, breakdown, preds, task.test_labels(), dates, insts, task.test_sizes, wall)


# --- learners ------------------------------------------------------------------------------


class DoubleAdaptLearner:
    """Holds the adapter parameters, the slow weights and their optimizer states.

    ``phi_update="inherit"`` replaces the meta update of the slow weights by
    ``phi <- theta``; with identity adapters this is plain incremental learning.
    """

    def __init__(self, model: ForecastModel, adapter: DataAdapter, psi: ParamSet, phi: ParamSet, eta_theta: float,
                 meta: MetaOptConfig, inner_steps: int = 1, phi_update: str = "meta"):
        if phi_update not in ("meta", "inherit"):
            raise ConfigError(f"phi_update must be meta|inherit, got {phi_update!r}")
        meta.validate()
        self.model, self.adapter, self.meta = model, adapter, meta
        self.psi, self.phi = psi, phi
        self.eta_theta, self.inner_steps, self.phi_update = eta_theta, inner_steps, phi_update
        self.reset_optimizers()

    def reset_optimizers(self) -> None:
        self.adam_psi = AdamState.fresh(self.psi)
        self.adam_phi = AdamState.fresh(self.phi)

    def copy(self) -> "DoubleAdaptLearner":
        return copy.deepcopy(self)

    def snapshot(self):
        return self.psi.clone(), self.phi.clone()

    def restore(self, snap) -> None:
        self.psi, self.phi = snap[0].clone(), snap[1].clone()

    def checksum(self) -> str:
        return self.psi.checksum() + self.phi.checksum()

    def run_task(self, task: TaskWindow) -> TaskReport:
        t0 = time.perf_counter()
        adapter, model, psi = self.adapter, self.model, self.psi
        X_train, y_train = task.train_arrays()
        # incremental data adaptation and lower-level fine-tune
        Xt_train, yt_train = adapter.adapt_train_set(psi, X_train, y_train)
        ma = ModelAdapterState(self.phi, self.eta_theta, self.inner_steps)
        theta, train_loss = lower_level_update(ma, model, Xt_train, yt_train)
        # inference sees test features only
        adapted = adapter.adapt_test_features(psi, task.test_features())
        preds = adapter.invert_predictions(psi, adapted, model.predict(theta, adapted.Xt))
        # labels revealed: upper-level updates
        y_test = task.test_labels()
        need_phi = self.meta.reg_mode == "adaptive"
        breakdown, g_psi, g_theta = meta_gradients(adapter, model, psi, theta, X_train, y_train,
                                                   task.test_features(), y_test, self.meta,
                                                   phi=self.phi if need_phi else None)
        if self.meta.eta_psi > 0:
            self.psi, self.adam_psi = update_data_adapter(adapter, psi, g_psi, self.adam_psi, self.meta.eta_psi)
        if self.phi_update == "inherit":
            self.phi = theta
        elif self.meta.eta_phi > 0:
            self.phi, self.adam_phi = update_model_adapter(self.phi, g_theta, self.adam_phi, self.meta.eta_phi)
        return _report(task, train_loss, breakdown, preds, time.perf_counter() - t0)


class NaiveILLearner:
    """Fine-tunes inherited weights on each task's raw incremental data with plain gradient steps."""

    def __init__(self, model: ForecastModel, theta: ParamSet, lr: float, steps: int = 1):
        self.model, self.theta, self.lr, self.steps = model, theta, lr, steps

    def reset_optimizers(self) -> None:
        pass

    def copy(self) -> "NaiveILLearner":
        return copy.deepcopy(self)

    def snapshot(self):
        return self.theta.clone()

    def restore(self, snap) -> None:
        self.theta = snap.clone()

    def checksum(self) -> str:
        return self.theta.checksum()

    def run_task(self, task: TaskWindow) -> TaskReport:
        t0 = time.perf_counter()
        X_train, y_train = task.train_arrays()
        train_loss = None
        for _ in range(self.steps):
            loss, grads = self.model.loss_and_grads(self.theta, X_train, y_train)
            train_loss = loss if train_loss is None else train_loss
            self.theta = sgd_step(self.theta, grads, self.lr)
        preds = self.model.predict(self.theta, task.test_features())
        l_mse = mse(preds, task.test_labels())
        return _report(task, train_loss, MetaLossBreakdown(l_mse, 0.0, l_mse), preds, time.perf_counter() - t0)


class RollingRetrainLearner:
    """Retrains from a fresh initialization on all data up to each task's incremental window."""

    def __init__(self, model: ForecastModel, dataset: StreamDataset, epochs: int, lr: float, batch_dates: int,
                 seed: int):
        self.model, self.dataset = model, dataset
        self.epochs, self.lr, self.batch_dates, self.seed = epochs, lr, max(1, batch_dates), seed

    def reset_optimizers(self) -> None:
        pass

    def copy(self):
        return copy.copy(self)

    def snapshot(self):
        return None

    def restore(self, snap) -> None:
        pass

    def checksum(self) -> str:
        return ""

    def history_size(self, task: TaskWindow) -> int:
        end = task.train_start + len(task.train_slices)
        return sum(len(s) for s in self.dataset.slices[:end])

    def run_task(self, task: TaskWindow) -> TaskReport:
        t0 = time.perf_counter()
        rng = substream(self.seed, f"rr-{task.k}")
        params = self.model.init(rng)
        state = AdamState.fresh(params)
        end = task.train_start + len(task.train_slices)
        history = self.dataset.slices[:end]
        batches = [history[i : i + self.batch_dates] for i in range(0, len(history), self.batch_dates)]
        arrays = [(np.concatenate([s.X for s in b]), np.concatenate([s.y for s in b])) for b in batches]
        loss = None
        for _ in range(self.epochs):
            for j in rng.permutation(len(arrays)):
                X, y = arrays[j]
                loss, grads = self.model.loss_and_grads(params, X, y)
                params, state = adam_step(params, grads, state, self.lr)
        preds = self.model.predict(params, task.test_features())
        l_mse = mse(preds, task.test_labels())
        train_loss = float("nan") if loss is None else loss
        return _report(task, train_loss, MetaLossBreakdown(l_mse, 0.0, l_mse), preds, time.perf_counter() - t0)


# --- phases --------------------------------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    valid_ic: float | None
    best: bool


@dataclass
class RunReport:
    task_reports: list
    test_ids: list
    metrics: MetricsSummary | None
    epoch_log: list = field(default_factory=list)

    def test_reports(self) -> list[TaskReport]:
        ids = set(self.test_ids)
        return [r for r in self.task_reports if r.k in ids]

    @property
    def n_predictions(self) -> int:
        return sum(len(r.predictions) for r in self.test_reports())


def run_tasks(learner, tasks: Sequence[TaskWindow]) -> list[TaskReport]:
    reports = []
    for task in tasks:
        try:
            reports.append(learner.run_task(task))
        except Exception as exc:
            raise RuntimeError(f"task {task.k} failed: {exc}") from exc
    return reports


def metrics_over(reports: Sequence[TaskReport]) -> MetricsSummary | None:
    groups = [g for r in reports for g in r.per_date()]
    try:
        return evaluate_predictions(groups)
    except ValueError:
        return None


def offline_train(learner, schedule: TaskSchedule, patience: int, max_epochs: int, seed: int) -> list[EpochRecord]:
    """Shuffled passes over meta-train; a throwaway copy runs meta-valid to score each epoch.

    Stops once validation IC has not exceeded the best value for ``patience``
    consecutive epochs and restores the best-epoch parameters.
    """
    if not schedule.meta_train:
        raise ConfigError("no meta-train tasks")
    if patience < 1:
        raise ConfigError("patience must be >= 1")
    rng = substream(seed, "shuffle")
    best_ic, best_snap, bad = -np.inf, learner.snapshot(), 0
    records = []
    train_tasks = list(schedule.meta_train)
    for epoch in range(max_epochs):
        learner.reset_optimizers()
        order = rng.permutation(len(train_tasks))
        reports = run_tasks(learner, [train_tasks[i] for i in order])
        probe = learner.copy()
        summary = metrics_over(run_tasks(probe, schedule.meta_valid))
        ic = None if summary is None else summary.ic_mean
        improved = ic is not None and ic > best_ic
        if improved:
            best_ic, best_snap, bad = ic, learner.snapshot(), 0
        else:
            bad += 1
        train_loss = float(np.mean([r.train_loss for r in reports]))
        records.append(EpochRecord(epoch, train_loss, ic, improved))
        log.info("epoch %d train_loss %.6f valid_ic %s", epoch, train_loss, ic)
        if bad >= patience:
            break
    learner.restore(best_snap)
    return records


def online_train(learner, schedule: TaskSchedule) -> RunReport:
    """Run meta-valid then meta-test tasks in order; metrics cover meta-test dates only."""
    learner.reset_optimizers()
    reports = run_tasks(learner, schedule.online)
    test_ids = [t.k for t in schedule.meta_test]
    ids = set(test_ids)
    return RunReport(reports, test_ids, metrics_over([r for r in reports if r.k in ids]))
