"""Glue between a RunConfig and the pipeline: data preparation, learners, outputs."""

from __future__ import annotations

import csv
from dataclasses import replace
from pathlib import Path

import numpy as np

from .adapter import DataAdapter
from .config import RunConfig
from .data import StreamDataset, TaskSchedule, build_schedule, load_csv, normalize
from .engine import ConfigError
from .meta import MetaOptConfig
from .metrics import ShiftPartition, ShiftProbe, partition_by_shift, shift_degree
from .models import ForecastModel, build_model, load_params, save_params
from .pipeline import (DoubleAdaptLearner, NaiveILLearner, RollingRetrainLearner, RunReport, metrics_over,
                       offline_train, online_train, substream)
from .synth import SynthStream, generate

VARIANTS = {
    # name: (mode, feature, label, phi_update)
    "IL": ("naive_il", False, False, "meta"),
    "IL+DA": ("doubleadapt", True, True, "inherit"),
    "IL+MA": ("doubleadapt", False, False, "meta"),
    "IL+MA+G": ("doubleadapt", True, False, "meta"),
    "IL+MA+H": ("doubleadapt", False, True, "meta"),
    "full": ("doubleadapt", True, True, "meta"),
}


class MissingCheckpointError(FileNotFoundError):
    pass


def load_stream(cfg: RunConfig) -> tuple[StreamDataset, SynthStream | None]:
    if cfg.data.path:
        return load_csv(cfg.data.path), None
    synth = cfg.data.synth
    rng = np.random.default_rng(synth.seed) if synth.seed is not None else substream(cfg.training.seed, "data")
    stream = generate(synth, rng)
    return stream.dataset, stream


def split_positions(ds: StreamDataset, cfg: RunConfig) -> tuple[int, int]:
    s = cfg.schedule
    train_end = ds.position_of(s.train_end) if s.train_end is not None else int(s.train_frac * ds.n_dates) - 1
    valid_end = ds.position_of(s.valid_end) if s.valid_end is not None else int(s.valid_frac * ds.n_dates) - 1
    return train_end, valid_end


def prepare(cfg: RunConfig) -> tuple[StreamDataset, TaskSchedule, SynthStream | None]:
    raw, stream = load_stream(cfg)
    train_end, valid_end = split_positions(raw, cfg)
    ds = normalize(raw, train_end)
    return ds, build_schedule(ds, cfg.schedule.r, train_end, valid_end), stream


def make_model(cfg: RunConfig, feature_dim: int) -> ForecastModel:
    return build_model(cfg.model.kind, feature_dim, tuple(cfg.model.hidden))


def make_learner(cfg: RunConfig, ds: StreamDataset, variant: str = "full", checkpoints: str | Path | None = None):
    mode, feature, label, phi_update = VARIANTS[variant]
    if variant == "full":
        mode, phi_update = cfg.training.mode, cfg.meta.phi_update
        feature, label = cfg.adapter.feature, cfg.adapter.label
    model = make_model(cfg, ds.feature_dim)
    seed = cfg.training.seed
    theta0 = model.init(substream(seed, "init"))
    if mode == "naive_il":
        if checkpoints is not None:
            theta0 = load_params(Path(checkpoints) / "theta.json")
        return NaiveILLearner(model, theta0, cfg.training.il_lr, cfg.training.il_steps)
    if mode == "rolling_retrain":
        return RollingRetrainLearner(model, ds, cfg.training.rr_epochs, cfg.training.rr_lr, cfg.schedule.r, seed)
    adapter = DataAdapter(replace(cfg.adapter, feature=feature, label=label), ds.feature_dim)
    psi = adapter.init(substream(seed, "adapter"))
    if checkpoints is not None:
        psi, theta0 = load_params(Path(checkpoints) / "psi.json"), load_params(Path(checkpoints) / "phi.json")
    m = cfg.meta
    meta = MetaOptConfig(m.alpha, m.eta_phi, m.eta_psi if (feature or label) else 0.0, m.reg_mode, m.sigma)
    return DoubleAdaptLearner(model, adapter, psi, theta0, m.eta_theta, meta, m.inner_steps, phi_update)


def pretrain(cfg: RunConfig, learner, schedule: TaskSchedule):
    if isinstance(learner, RollingRetrainLearner):
        return []
    return offline_train(learner, schedule, cfg.training.patience, cfg.training.max_epochs, cfg.training.seed)


def save_checkpoints(learner, directory: Path) -> list[Path]:
    directory.mkdir(parents=True, exist_ok=True)
    if isinstance(learner, DoubleAdaptLearner):
        save_params(learner.psi, directory / "psi.json")
        save_params(learner.phi, directory / "phi.json")
        return [directory / "psi.json", directory / "phi.json"]
    if isinstance(learner, NaiveILLearner):
        save_params(learner.theta, directory / "theta.json")
        return [directory / "theta.json"]
    return []


def has_checkpoints(cfg: RunConfig, directory: Path) -> bool:
    names = ["theta.json"] if cfg.training.mode == "naive_il" else ["psi.json", "phi.json"]
    return all((directory / n).exists() for n in names)


def shift_partition(cfg: RunConfig, ds: StreamDataset, schedule: TaskSchedule) -> ShiftPartition:
    """Naive-IL probe pretrained on meta-train, then walked through the online tasks."""
    model = make_model(cfg, ds.feature_dim)
    probe_learner = NaiveILLearner(model, model.init(substream(cfg.training.seed, "probe")), cfg.training.il_lr,
                                   cfg.training.il_steps)
    offline_train(probe_learner, schedule, cfg.training.patience, cfg.training.max_epochs, cfg.training.seed)
    probe = ShiftProbe(model, probe_learner.theta, cfg.training.il_lr, cfg.training.il_steps)
    test_ids = {t.k for t in schedule.meta_test}
    ids, deltas = [], []
    for task in schedule.online:
        X_train, y_train = task.train_arrays()
        delta = shift_degree(probe, X_train, y_train, task.test_features(), task.test_labels())
        if task.k in test_ids:
            ids.append(task.k)
            deltas.append(delta)
    return partition_by_shift(deltas, ids)


def stratified_rows(report: RunReport, partition: ShiftPartition | None) -> list[dict]:
    tests = report.test_reports()
    strata = [("overall", tests)]
    if partition is not None:
        for name in ("gradual", "middle", "abrupt"):
            strata.append((name, [r for r in tests if partition.stratum_of(r.k) == name]))
    rows = []
    for name, reps in strata:
        m = metrics_over(reps)
        row = {"stratum": name, "n_tasks": len(reps)}
        row.update(m.row() if m else {"ic": None, "icir": None, "rank_ic": None, "rank_icir": None, "n_dates": 0})
        rows.append(row)
    return rows


# --- writers ------------------------------------------------------------------------------


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_rows(path: Path, header: list[str], rows: list[dict]) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(row.get(h)) for h in header])


REPORT_COLUMNS = ["k", "split", "train_loss", "l_mse", "l_reg", "l_test", "l_test_at_phi", "reg_coef", "ic",
                  "rank_ic", "n_pred"]


def report_rows(report: RunReport) -> list[dict]:
    test_ids = set(report.test_ids)
    rows = []
    for r in report.task_reports:
        b = r.breakdown
        m = metrics_over([r])
        rows.append({
            "k": r.k, "split": "test" if r.k in test_ids else "valid", "train_loss": r.train_loss,
            "l_mse": b.l_mse if b else None, "l_reg": b.l_reg if b else None, "l_test": b.l_test if b else None,
            "l_test_at_phi": b.l_test_at_phi if b else None, "reg_coef": b.reg_coef if b else None,
            "ic": m.ic_mean if m else None, "rank_ic": m.rank_ic_mean if m else None,
            "n_pred": len(r.predictions),
        })
    return rows


def write_run_outputs(out: Path, report: RunReport, ds: StreamDataset, partition: ShiftPartition | None) -> None:
    out.mkdir(parents=True, exist_ok=True)
    write_rows(out / "report.csv", REPORT_COLUMNS, report_rows(report))
    preds = []
    for r in report.test_reports():
        for i in range(len(r.predictions)):
            preds.append({"date": ds.date_labels[r.date_indices[i]], "instrument": r.instruments[i],
                          "prediction": float(r.predictions[i]), "label": float(r.labels[i]), "k": r.k})
    write_rows(out / "predictions.csv", ["date", "instrument", "prediction", "label", "k"], preds)
    write_rows(out / "metrics.csv", ["stratum", "ic", "icir", "rank_ic", "rank_icir", "n_dates", "n_tasks"],
               stratified_rows(report, partition))
    write_rows(out / "timings.csv", ["k", "wall_time"],
               [{"k": r.k, "wall_time": r.wall_time} for r in report.task_reports])


def write_epoch_log(path: Path, records) -> None:
    write_rows(path, ["epoch", "train_loss", "valid_ic", "best"],
               [{"epoch": e.epoch, "train_loss": e.train_loss, "valid_ic": e.valid_ic, "best": int(e.best)}
                for e in records])


def run_variant(cfg: RunConfig, ds: StreamDataset, schedule: TaskSchedule, variant: str) -> RunReport:
    learner = make_learner(cfg, ds, variant)
    log = pretrain(cfg, learner, schedule)
    report = online_train(learner, schedule)
    report.epoch_log = log
    return report


def ablate(cfg: RunConfig, variants=tuple(VARIANTS)) -> list[dict]:
    ds, schedule, _ = prepare(cfg)
    partition = shift_partition(cfg, ds, schedule)
    rows = []
    for v in variants:
        if v not in VARIANTS:
            raise ConfigError(f"unknown variant {v!r}")
        report = run_variant(cfg, ds, schedule, v)
        for row in stratified_rows(report, partition):
            rows.append({"variant": v, **row})
    return rows
