"""Acceptance criteria, one test each, at their stated tolerances.

Each test prints a single ``PASS``/``FAIL`` line; the lines are repeated in the
pytest terminal summary. Run ``python tests/test_acceptance.py`` to get only the lines.
"""

from __future__ import annotations

import math
import time
from pathlib import Path

import numpy as np
import yaml

from doubleadapt import cli, runner
from doubleadapt.adapter import (AdapterConfig, DataAdapter, FeatureMap, GateMap, InverseCompositeMap, LabelGateMap,
                                 LabelMap, adapt_label, invert_prediction)
from doubleadapt.config import from_dict
from doubleadapt.data import DateSlice, TaskWindow, all_tasks_schedule, normalize
from doubleadapt.engine import AffineMap, ParamSet, finite_difference_check
from doubleadapt.meta import MetaObjectiveMap, MetaOptConfig
from doubleadapt.metrics import ic_per_date, rank_ic_per_date
from doubleadapt.models import LinearModel, MlpModel
from doubleadapt.pipeline import DoubleAdaptLearner, NaiveILLearner, RollingRetrainLearner, run_tasks, substream
from doubleadapt.synth import SynthConfig, generate, oracle_best_ic

try:
    from conftest import ACCEPTANCE_LINES, random_psi
except ImportError:  # run as a script from the repo root
    import sys
    sys.path.insert(0, str(Path(__file__).parent))
    from conftest import ACCEPTANCE_LINES, random_psi


def verdict(n: int, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {n:>2}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line, flush=True)
    assert ok, line


# --- 1 ----------------------------------------------------------------------------------


def _gradient_cases(seed):
    rng = np.random.default_rng(seed)
    D, n = 4, 6
    adapter = DataAdapter(AdapterConfig(heads=3, v_dim=5, tau=1.0), D)
    psi = random_psi(adapter, rng)
    X, y = rng.standard_normal((n, D)), rng.standard_normal(n)
    G = adapter.gate_input(X, adapter.feature_forward(psi, X)[0])
    mlp, lin = MlpModel(D, (6,)), LinearModel(D)
    data = (X, y, rng.standard_normal((5, D)), rng.standard_normal(5))
    return [
        ("affine", AffineMap(), ParamSet(W=rng.standard_normal((3, D)), b=rng.standard_normal(3)), X),
        ("gating", GateMap(adapter), psi, X),
        ("adapt_feature", FeatureMap(adapter), psi, X),
        ("label_gating", LabelGateMap(adapter), psi, G),
        ("adapt_label", LabelMap(adapter), psi, (G, y)),
        ("invert_composite", InverseCompositeMap(adapter), psi, (X, y)),
        ("linear_model", lin, lin.init(rng), X),
        ("mlp_model", mlp, mlp.init(rng), X),
        ("meta_gradient_psi", MetaObjectiveMap(adapter, mlp, mlp.init(rng), 0.5), psi, data),
    ]


def _stencil_error(fmap, params, inp, seed, h=1e-3):
    """Max relative error against a 5-point stencil; diagnostic only, it separates
    roundoff in the 2-point difference from a wrong analytic gradient."""
    out = np.asarray(fmap.forward(params, inp))
    proj = np.random.default_rng(seed).standard_normal(out.shape)
    analytic, _ = fmap.backward(params, inp, proj)
    worst = 0.0
    for name, value in params.items():
        for idx in np.ndindex(value.shape):
            def at(d):
                q = params.clone()
                q[name][idx] += d
                return float(np.sum(proj * fmap.forward(q, inp)))
            numeric = (-at(2 * h) + 8 * at(h) - 8 * at(-h) + at(-2 * h)) / (12 * h)
            worst = max(worst, abs(float(np.asarray(analytic[name])[idx]) - numeric) / max(1e-12, abs(numeric)))
    return worst


def test_criterion_01_gradient_fidelity():
    t0 = time.perf_counter()
    worst: dict[str, float] = {}
    for seed in range(10):
        for name, fmap, params, inp in _gradient_cases(seed):
            worst[name] = max(worst.get(name, 0.0), finite_difference_check(fmap, params, inp, eps=1e-6, seed=seed))
    elapsed = time.perf_counter() - t0
    bad = {k: f"{v:.2e}" for k, v in worst.items() if not v <= 1e-5}
    note = ""
    if bad:
        stencil = max(_stencil_error(fmap, params, inp, seed) for seed in range(10)
                      for name, fmap, params, inp in _gradient_cases(seed) if name in bad)
        note = f"; failing {bad}, 5-point stencil max rel err on those maps {stencil:.1e}"
    verdict(1, not bad and elapsed < 30,
            f"gradient checks, {len(worst)} maps x 10 seeds, max rel err {max(worst.values()):.2e} "
            f"(<= 1e-5), {elapsed:.1f}s (< 30s){note}")


# --- 2 ----------------------------------------------------------------------------------


def test_criterion_02_invertibility():
    rng = np.random.default_rng(0)
    adapter = DataAdapter(AdapterConfig(heads=1, v_dim=2), 2)
    psi = adapter.init(rng)
    worst = 0.0
    for _ in range(1000):
        gamma = rng.choice([-1.0, 1.0]) * 10 ** rng.uniform(-3, 1)
        psi["gamma"], psi["beta"] = np.array([gamma]), np.array([rng.uniform(-1, 1)])
        x, y = rng.standard_normal(2), float(rng.standard_normal())
        worst = max(worst, abs(invert_prediction(adapter, psi, x, adapt_label(adapter, psi, x, y)) - y))
    verdict(2, worst <= 1e-12, f"single-head round trip over 1000 draws, max |err| {worst:.2e} (<= 1e-12)")


# --- 3 ----------------------------------------------------------------------------------


def test_criterion_03_identity_degeneration():
    r, lr = 4, 0.01
    ds = normalize(generate(SynthConfig(n_dates=51 * r, n_instruments=30, seed=0)).dataset, 20 * r)
    tasks = all_tasks_schedule(ds, r)
    model = MlpModel(10, (32,))
    phi = model.init(substream(0, "init"))
    adapter = DataAdapter(AdapterConfig(), 10)
    da = DoubleAdaptLearner(model, adapter, adapter.init(substream(0, "adapter")), phi.clone(), lr,
                            MetaOptConfig(eta_phi=0.0, eta_psi=0.0), phi_update="inherit")
    il = NaiveILLearner(model, phi.clone(), lr)
    worst = max(float(np.max(np.abs(a.predictions - b.predictions)))
                for a, b in zip(run_tasks(da, tasks), run_tasks(il, tasks)))
    verdict(3, len(tasks) == 50 and worst <= 1e-10,
            f"identity adapters vs naive IL over {len(tasks)} tasks, max |diff| {worst:.2e} (<= 1e-10)")


# --- 4 ----------------------------------------------------------------------------------


def test_criterion_04_first_order_oracle():
    w0, b0 = 0.3, -0.1
    x1, y1, x2, y2 = 1.5, 0.7, -0.4, 1.2
    eta_theta, eta_phi = 0.1, 0.01
    # hand derivation: one SGD step on the train pair, gradient of the test loss at theta,
    # first Adam step from zero moments is -eta * g / (|g| + eps) per coordinate
    r1 = w0 * x1 + b0 - y1
    tw, tb = w0 - eta_theta * 2 * r1 * x1, b0 - eta_theta * 2 * r1
    r2 = tw * x2 + tb - y2
    gw, gb = 2 * r2 * x2, 2 * r2
    expected_w = w0 - eta_phi * gw / (abs(gw) + 1e-8)
    expected_b = b0 - eta_phi * gb / (abs(gb) + 1e-8)

    model = LinearModel(1)
    adapter = DataAdapter(AdapterConfig(), 1)
    learner = DoubleAdaptLearner(model, adapter, adapter.init(np.random.default_rng(0)),
                                 ParamSet(w=[w0], b=np.array(b0)), eta_theta, MetaOptConfig(eta_phi=eta_phi))
    train = DateSlice(0, ("a",), np.array([[x1]]), np.array([y1]))
    test = DateSlice(1, ("a",), np.array([[x2]]), np.array([y2]))
    learner.run_task(TaskWindow(1, (train,), (test,), 0, 1))
    err = max(abs(learner.phi["w"][0] - expected_w), abs(float(learner.phi["b"]) - expected_b))
    verdict(4, err <= 1e-8, f"scalar first-order meta step vs closed form, |err| {err:.2e} (<= 1e-8)")


# --- 5, 6 -------------------------------------------------------------------------------

SHARED = {
    "schedule": {"r": 5, "train_end": 129, "valid_end": 199},
    "model": {"kind": "mlp", "hidden": [32]},
    "meta": {"eta_theta": 0.05, "eta_phi": 0.01, "eta_psi": 0.01},
    "training": {"patience": 8, "max_epochs": 20, "il_lr": 0.05},
}


def _drift_cfg(seed, synth):
    raw = {**SHARED, "data": {"synth": synth}}
    raw["training"] = {**SHARED["training"], "seed": seed}
    return from_dict(raw)


def _variant_ics(synth, variants, seeds=range(10)):
    out = {v: [] for v in variants}
    ceilings = []
    for seed in seeds:
        cfg = _drift_cfg(seed, synth)
        ds, sch, stream = runner.prepare(cfg)
        ceilings.append(np.mean(oracle_best_ic(stream, list(sch.meta_test))))
        for v in variants:
            out[v].append(runner.run_variant(cfg, ds, sch, v).metrics.ic_mean)
    return {v: np.array(x) for v, x in out.items()}, float(np.mean(ceilings))


def test_criterion_05_gradual_drift_benefit():
    t0 = time.perf_counter()
    ics, ceiling = _variant_ics({"drift_mode": "gradual", "drift_rate": 0.02}, ("IL", "IL+MA", "full"))
    elapsed = time.perf_counter() - t0
    wins = int(np.sum(ics["full"] >= ics["IL"]))
    med = {v: float(np.median(x)) for v, x in ics.items()}
    ok = wins >= 8 and med["IL"] <= med["IL+MA"] <= med["full"] and elapsed < 300
    verdict(5, ok, f"gradual drift (ceiling IC {ceiling:.3f}): full >= IL in {wins}/10 seeds (>= 8); "
                   f"median IC IL {med['IL']:.4f} <= IL+MA {med['IL+MA']:.4f} <= full {med['full']:.4f}; "
                   f"{elapsed:.0f}s (< 300s)")


def test_criterion_06_recurring_regimes():
    ics, _ = _variant_ics({"drift_mode": "recurring", "switch_period": 10}, ("IL", "full"))
    med_il, med_full = float(np.median(ics["IL"])), float(np.median(ics["full"]))
    verdict(6, med_full >= med_il, f"recurring regimes (switch every 2r): median IC full {med_full:.4f} "
                                   f">= IL {med_il:.4f}")


# --- 7 ----------------------------------------------------------------------------------


def test_criterion_07_per_task_cost():
    r, S, D = 2, 50, 10
    ds = normalize(generate(SynthConfig(n_dates=251 * r, n_instruments=S, feature_dim=D, seed=0)).dataset, 50)
    tasks = all_tasks_schedule(ds, r)
    model = MlpModel(D, (32,))
    adapter = DataAdapter(AdapterConfig(), D)
    da = DoubleAdaptLearner(model, adapter, adapter.init(substream(0, "adapter")), model.init(substream(0, "init")),
                            0.001, MetaOptConfig())
    da_times = {rep.k: rep.wall_time for rep in run_tasks(da, tasks)}
    early, late = range(5, 16), range(195, 206)
    da_ratio = np.median([da_times[k] for k in late]) / np.median([da_times[k] for k in early])
    # retraining is stateless per task, so only the two windows need to run
    rr = RollingRetrainLearner(model, ds, epochs=5, lr=0.001, batch_dates=r, seed=0)
    rr_times = {t.k: rr.run_task(t).wall_time for t in tasks if t.k in early or t.k in late}
    rr_ratio = np.median([rr_times[k] for k in late]) / np.median([rr_times[k] for k in early])
    verdict(7, len(tasks) == 250 and da_ratio <= 1.5 and rr_ratio >= 3,
            f"per-task time task~200 / task~10 (11-task window medians): DoubleAdapt {da_ratio:.2f} (<= 1.5), "
            f"rolling retrain E=5 {rr_ratio:.1f} (>= 3)")


# --- 8 ----------------------------------------------------------------------------------


def _brute_pearson(a, b):
    n = len(a)
    ma, mb = math.fsum(a) / n, math.fsum(b) / n
    cov = math.fsum((x - ma) * (y - mb) for x, y in zip(a, b))
    va = math.fsum((x - ma) ** 2 for x in a)
    vb = math.fsum((y - mb) ** 2 for y in b)
    return cov / math.sqrt(va * vb)


def _brute_midranks(a):
    # rank = 1 + (#smaller) + (#equal - 1) / 2
    return [1 + sum(y < x for y in a) + (sum(y == x for y in a) - 1) / 2 for x in a]


def test_criterion_08_metric_oracles():
    rng = np.random.default_rng(0)
    worst, ties = 0.0, 0
    for _ in range(100):
        n = int(rng.integers(5, 60))
        p = np.round(rng.standard_normal(n), int(rng.integers(0, 3)))
        y = np.round(rng.standard_normal(n), int(rng.integers(0, 3)))
        ties += len(np.unique(p)) < n or len(np.unique(y)) < n
        pl, yl = p.tolist(), y.tolist()
        worst = max(worst, abs(ic_per_date(p, y) - _brute_pearson(pl, yl)),
                    abs(rank_ic_per_date(p, y) - _brute_pearson(_brute_midranks(pl), _brute_midranks(yl))))
    verdict(8, worst <= 1e-12 and ties > 0,
            f"IC/RankIC vs brute force on 100 cross-sections ({ties} with ties), max |diff| {worst:.2e} (<= 1e-12)")


# --- 9 ----------------------------------------------------------------------------------


def test_criterion_09_shift_partition():
    r, period = 5, 20
    hits = total = 0
    for seed in range(10):
        cfg = from_dict({"data": {"synth": {"drift_mode": "abrupt", "switch_period": period}},
                         "schedule": {"r": r, "train_end": 129, "valid_end": 199},
                         "training": {"seed": seed, "max_epochs": 20}})
        ds, sch, _ = runner.prepare(cfg)
        part = runner.shift_partition(cfg, ds, sch)
        straddling = [k for k in part.task_ids if (k * r) % period == 0]
        hits += sum(k in part.abrupt for k in straddling)
        total += len(straddling)
    frac = hits / total
    verdict(9, frac >= 0.75, f"regime-straddling tasks in the abrupt quartile: {hits}/{total} = {frac:.0%} "
                             f"over 10 seeds (>= 75%)")


# --- 10 ---------------------------------------------------------------------------------


def test_criterion_10_determinism(tmp_path):
    cfg = {"data": {"synth": {"n_dates": 160, "n_instruments": 20}}, "schedule": {"r": 5},
           "training": {"max_epochs": 4, "patience": 2, "seed": 11}}
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(cfg), encoding="utf-8")
    names = ("report.csv", "predictions.csv", "metrics.csv", "epoch_log.csv")
    outputs = []
    for run in ("a", "b"):
        out = tmp_path / run
        assert cli.main(["pretrain", "--config", str(path), "--out", str(out)]) == 0
        assert cli.main(["online", "--config", str(path), "--out", str(out)]) == 0
        outputs.append({n: (out / n).read_bytes() for n in names})
    same = [n for n in names if outputs[0][n] == outputs[1][n]]
    verdict(10, len(same) == len(names), f"two pretrain+online runs: {len(same)}/{len(names)} CSVs byte-identical")


if __name__ == "__main__":
    import pytest
    raise SystemExit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
