from __future__ import annotations

import numpy as np
import pytest

from doubleadapt.adapter import AdapterConfig, DataAdapter
from doubleadapt.config import from_dict
from doubleadapt.data import DateSlice, StreamDataset
from doubleadapt.engine import ParamSet


def random_psi(adapter: DataAdapter, rng: np.random.Generator, scale: float = 0.3) -> ParamSet:
    """Adapter parameters well away from the identity, gammas bounded away from zero."""
    psi = adapter.init(rng)
    out = ParamSet()
    for k, v in psi.items():
        if k == "gamma":
            out[k] = rng.choice([-1.0, 1.0], v.shape) * rng.uniform(0.5, 1.5, v.shape)
        else:
            out[k] = scale * rng.standard_normal(v.shape)
    return out


def make_dataset(n_dates: int, n_inst: int, D: int, seed: int = 0) -> StreamDataset:
    rng = np.random.default_rng(seed)
    insts = tuple(f"s{i}" for i in range(n_inst))
    slices = tuple(DateSlice(t, insts, rng.standard_normal((n_inst, D)), rng.standard_normal(n_inst))
                   for t in range(n_dates))
    return StreamDataset(slices, D)


SMALL = {
    "data": {"synth": {"n_dates": 120, "n_instruments": 20, "feature_dim": 6}},
    "schedule": {"r": 5},
    "training": {"max_epochs": 3, "patience": 2},
}


@pytest.fixture
def small_cfg():
    return from_dict(SMALL)


@pytest.fixture
def adapter_factory():
    def make(D=4, **kw):
        kw.setdefault("heads", 3)
        kw.setdefault("v_dim", 5)
        return DataAdapter(AdapterConfig(**kw), D)
    return make


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
