"""Differentiable forecast models operating on explicit parameter sets."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

import numpy as np

from .engine import DimensionError, EmptyBatchError, ParamSet, Tensor, as_tensor, mse, mse_grad


class ForecastModel:
    """Base class: subclasses provide ``init``, ``forward`` and ``backward``.

    ``backward`` returns parameter gradients and the gradient wrt the input rows, so
    the model can sit behind the data adapter in a chained gradient computation.
    """

    input_dim: int

    def _check(self, X: Tensor) -> Tensor:
        X = as_tensor(X)
        if X.ndim != 2 or X.shape[1] != self.input_dim:
            raise DimensionError(f"expected (S, {self.input_dim}) features, got {X.shape}")
        return X

    def predict(self, params: ParamSet, X: Tensor) -> Tensor:
        return self.forward(params, X)

    def loss_and_grads(self, params: ParamSet, X: Tensor, y: Tensor) -> tuple[float, ParamSet]:
        y = as_tensor(y)
        if y.size == 0:
            raise EmptyBatchError("loss on an empty batch")
        pred = self.forward(params, X)
        grads, _ = self.backward(params, X, mse_grad(pred, y))
        return mse(pred, y), grads


class LinearModel(ForecastModel):
    def __init__(self, input_dim: int):
        self.input_dim = input_dim

    def init(self, rng: np.random.Generator) -> ParamSet:
        bound = 1.0 / np.sqrt(self.input_dim)
        return ParamSet(w=rng.uniform(-bound, bound, self.input_dim), b=np.zeros(()))

    def forward(self, params: ParamSet, X: Tensor) -> Tensor:
        return self._check(X) @ params["w"] + params["b"]

    def backward(self, params: ParamSet, X: Tensor, upstream: Tensor) -> tuple[ParamSet, Tensor]:
        X = self._check(X)
        return ParamSet(w=X.T @ upstream, b=np.sum(upstream)), np.outer(upstream, params["w"])

    def num_params(self) -> int:
        return self.input_dim + 1


class MlpModel(ForecastModel):
    """Fully connected tanh network with a scalar linear output."""

    def __init__(self, input_dim: int, hidden: Sequence[int] = (32,)):
        self.input_dim = input_dim
        self.sizes = [input_dim, *hidden, 1]

    def init(self, rng: np.random.Generator) -> ParamSet:
        params = ParamSet()
        for i, (fan_in, fan_out) in enumerate(zip(self.sizes, self.sizes[1:])):
            bound = 1.0 / np.sqrt(fan_in)
            params[f"W{i}"] = rng.uniform(-bound, bound, (fan_out, fan_in))
            params[f"b{i}"] = rng.uniform(-bound, bound, fan_out)
        return params

    def num_params(self) -> int:
        return sum(a * b + b for a, b in zip(self.sizes, self.sizes[1:]))

    def _layers(self):
        return range(len(self.sizes) - 1)

    def _forward(self, params, X):
        acts = [X]
        h = X
        for i in self._layers():
            z = h @ params[f"W{i}"].T + params[f"b{i}"]
            h = z if i == len(self.sizes) - 2 else np.tanh(z)
            acts.append(h)
        return acts

    def forward(self, params: ParamSet, X: Tensor) -> Tensor:
        return self._forward(params, self._check(X))[-1][:, 0]

    def backward(self, params: ParamSet, X: Tensor, upstream: Tensor) -> tuple[ParamSet, Tensor]:
        acts = self._forward(params, self._check(X))
        grads = ParamSet()
        delta = as_tensor(upstream)[:, None]
        last = len(self.sizes) - 2
        for i in reversed(self._layers()):
            if i != last:
                delta = delta * (1.0 - acts[i + 1] ** 2)
            grads[f"W{i}"] = delta.T @ acts[i]
            grads[f"b{i}"] = delta.sum(axis=0)
            delta = delta @ params[f"W{i}"]
        ordered = ParamSet({k: grads[k] for k in params})
        return ordered, delta


def build_model(kind: str, input_dim: int, hidden: Sequence[int] = (32,)) -> ForecastModel:
    if kind == "linear":
        return LinearModel(input_dim)
    if kind == "mlp":
        return MlpModel(input_dim, hidden)
    raise ValueError(f"unknown model kind {kind!r}")


# --- checkpoints ------------------------------------------------------------------


def save_params(params: ParamSet, path: str | Path) -> None:
    """JSON list of (name, shape, values); float repr round-trips exactly."""
    records = [{"name": k, "shape": list(v.shape), "values": v.ravel().tolist()} for k, v in params.items()]
    Path(path).write_text(json.dumps(records) + "\n", encoding="utf-8")


def load_params(path: str | Path) -> ParamSet:
    records = json.loads(Path(path).read_text(encoding="utf-8"))
    return ParamSet({r["name"]: np.array(r["values"], dtype=np.float64).reshape(r["shape"]) for r in records})
