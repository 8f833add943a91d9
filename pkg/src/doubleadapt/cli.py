"""Batch command-line front end: generate, pretrain, online, ablate, print-config."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import runner
from .config import MODES, RunConfig, load_config, with_overrides
from .data import write_csv
from .engine import ConfigError


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dump_config(cfg: RunConfig, out: Path) -> None:
    (out / "effective_config.yaml").write_text(cfg.dump(), encoding="utf-8")


def cmd_print_config(cfg: RunConfig, args) -> int:
    sys.stdout.write(cfg.dump())
    return 0


def cmd_generate(cfg: RunConfig, args) -> int:
    out = _out_dir(cfg)
    ds, stream = runner.load_stream(cfg)
    if stream is None:
        raise ConfigError("generate needs a synthetic data section (data.path must be unset)")
    synth = cfg.data.synth
    seed = synth.seed if synth.seed is not None else cfg.training.seed
    meta = {"seed": seed, "drift_mode": synth.drift_mode, "feature_dim": synth.feature_dim}
    write_csv(ds, out / "stream.csv", meta)
    _dump_config(cfg, out)
    print(out / "stream.csv")
    return 0


def cmd_pretrain(cfg: RunConfig, args) -> int:
    if cfg.training.mode == "rolling_retrain":
        raise ConfigError("rolling_retrain has no offline phase")
    out = _out_dir(cfg)
    ds, schedule, _ = runner.prepare(cfg)
    learner = runner.make_learner(cfg, ds)
    records = runner.pretrain(cfg, learner, schedule)
    runner.write_epoch_log(out / "epoch_log.csv", records)
    for path in runner.save_checkpoints(learner, out):
        print(path)
    _dump_config(cfg, out)
    return 0


def cmd_online(cfg: RunConfig, args) -> int:
    out = _out_dir(cfg)
    ckpt = Path(args.checkpoints) if args.checkpoints else out
    ds, schedule, _ = runner.prepare(cfg)
    mode = cfg.training.mode
    if mode == "rolling_retrain":
        learner = runner.make_learner(cfg, ds)
    elif runner.has_checkpoints(cfg, ckpt):
        learner = runner.make_learner(cfg, ds, checkpoints=ckpt)
    elif mode == "naive_il":
        # no checkpoint: the baseline pretrains itself on the training range
        learner = runner.make_learner(cfg, ds)
        runner.pretrain(cfg, learner, schedule)
    else:
        raise runner.MissingCheckpointError(f"no psi.json/phi.json in {ckpt}; run pretrain first")
    report = runner.online_train(learner, schedule)
    partition = runner.shift_partition(cfg, ds, schedule)
    runner.write_run_outputs(out, report, ds, partition)
    _dump_config(cfg, out)
    m = report.metrics
    print(json.dumps({"mode": mode, "ic": m.ic_mean if m else None, "rank_ic": m.rank_ic_mean if m else None,
                      "n_predictions": report.n_predictions}))
    return 0


def cmd_ablate(cfg: RunConfig, args) -> int:
    out = _out_dir(cfg)
    rows = runner.ablate(cfg)
    header = ["variant", "stratum", "ic", "icir", "rank_ic", "rank_icir", "n_dates", "n_tasks"]
    runner.write_rows(out / "ablation.csv", header, rows)
    _dump_config(cfg, out)
    for row in rows:
        ic = row["ic"]
        print(f"{row['variant']:<8} {row['stratum']:<8} ic={'null' if ic is None else f'{ic:.4f}'}")
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "pretrain": cmd_pretrain,
    "online": cmd_online,
    "ablate": cmd_ablate,
    "print-config": cmd_print_config,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.exit(2, f"error: UsageError: {' '.join(message.split())}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="doubleadapt", description=__doc__)
    p.add_argument("command", choices=list(COMMANDS))
    p.add_argument("--config", help="YAML run configuration (defaults apply when omitted)")
    p.add_argument("--out", help="output directory (overrides output.directory)")
    p.add_argument("--seed", type=int, help="override training.seed")
    p.add_argument("--mode", choices=MODES, help="override training.mode")
    p.add_argument("--checkpoints", help="directory holding checkpoints for `online` (default: --out)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(message)s")
    try:
        if args.seed is not None and args.seed < 0:
            raise ConfigError("--seed must be a non-negative integer")
        cfg = with_overrides(load_config(args.config), args.seed, args.mode, args.out)
        return COMMANDS[args.command](cfg, args)
    except Exception as exc:  # one machine-parsable line, nonzero exit
        reason = " ".join(str(exc).split())
        print(f"error: {type(exc).__name__}: {reason}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
