"""Data adapter: prototype-gated multi-head feature and label adaptation with inverse.

Parameter names in the adapter's ParamSet:

    W (N, d, d), b (N, d), proto (N, d)        feature heads and prototypes
    gamma (N,), beta (N,)                      label heads
    proj (v, D), label_proto (N, v)            label gate (``label_gate="separate"`` only)

In ``timeseries`` layout a feature row of width D = L*d is read as L steps of d
indicators, and heads/prototypes are shared across steps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import (ConfigError, DimensionError, ParamSet, Tensor, as_tensor, cosine_matrix,
                     cosine_matrix_backward, softmax_temp, softmax_temp_backward)

FEATURE_PARAMS = ("W", "b", "proto")
LABEL_PARAMS = ("gamma", "beta", "proj", "label_proto")


class ParameterValidationError(ValueError):
    pass


@dataclass(frozen=True)
class AdapterConfig:
    heads: int = 8
    tau: float = 10.0
    gamma_min: float = 1e-3
    label_gate: str = "separate"
    layout: str = "flat"
    steps: int = 1
    v_dim: int = 16
    feature: bool = True
    label: bool = True
    init_scale: float = 0.1

    def validate(self, feature_dim: int) -> None:
        if self.heads < 1:
            raise ConfigError("adapter.heads must be >= 1")
        if not self.tau > 0:
            raise ConfigError("adapter.tau must be positive")
        if not self.gamma_min > 0:
            raise ConfigError("adapter.gamma_min must be positive")
        if self.label_gate not in ("separate", "shared"):
            raise ConfigError(f"adapter.label_gate must be separate|shared, got {self.label_gate!r}")
        if self.layout not in ("flat", "timeseries"):
            raise ConfigError(f"adapter.layout must be flat|timeseries, got {self.layout!r}")
        if self.layout == "timeseries":
            if self.steps < 1 or feature_dim % self.steps:
                raise ConfigError(f"feature_dim {feature_dim} is not divisible into {self.steps} steps")
            if self.label_gate == "shared":
                raise ConfigError("label_gate=shared requires the flat layout")
        if self.v_dim < 1:
            raise ConfigError("adapter.v_dim must be >= 1")


@dataclass
class _FeatureCache:
    X: Tensor
    Z: Tensor
    C: Tensor
    nz: Tensor
    np_: Tensor
    S: Tensor
    G: Tensor


@dataclass
class _GateCache:
    inp: Tensor
    V: Tensor
    C: Tensor
    nv: Tensor
    np_: Tensor
    S: Tensor


@dataclass
class AdaptedTestFeatures:
    """What inference sees for a test window: adapted features and label-gate scores, no labels."""

    Xt: Tensor
    label_scores: Tensor

    def __len__(self) -> int:
        return len(self.Xt)


class DataAdapter:
    def __init__(self, config: AdapterConfig, feature_dim: int):
        config.validate(feature_dim)
        self.config = config
        self.D = feature_dim
        self.L = config.steps if config.layout == "timeseries" else 1
        self.d = feature_dim // self.L

    @property
    def separate_gate(self) -> bool:
        return self.config.label_gate == "separate"

    def init(self, rng: np.random.Generator) -> ParamSet:
        N, d, c = self.config.heads, self.d, self.config
        psi = ParamSet(
            W=np.zeros((N, d, d)),
            b=np.zeros((N, d)),
            proto=c.init_scale * rng.standard_normal((N, d)),
            gamma=np.ones(N),
            beta=np.zeros(N),
        )
        if self.separate_gate:
            psi["proj"] = c.init_scale * rng.standard_normal((c.v_dim, self.D))
            psi["label_proto"] = c.init_scale * rng.standard_normal((N, c.v_dim))
        return psi

    def project_gamma(self, psi: ParamSet) -> ParamSet:
        """Keep every label head invertible: |gamma_i| >= gamma_min, sign preserved."""
        out = psi.clone()
        g = out["gamma"]
        sign = np.where(g < 0, -1.0, 1.0)
        out["gamma"] = sign * np.maximum(np.abs(g), self.config.gamma_min)
        return out

    def check_gamma(self, psi: ParamSet) -> None:
        if np.any(np.abs(psi["gamma"]) < self.config.gamma_min):
            raise ParameterValidationError(f"label head gamma below guard {self.config.gamma_min}")

    # --- feature adaptation ---------------------------------------------------------

    def _rows(self, X: Tensor) -> Tensor:
        X = as_tensor(X)
        if X.ndim != 2 or X.shape[1] != self.D:
            raise DimensionError(f"adapter expects (n, {self.D}) features, got {X.shape}")
        return X.reshape(len(X) * self.L, self.d)

    def feature_forward(self, psi: ParamSet, X: Tensor) -> tuple[Tensor, _FeatureCache | None]:
        if not self.config.feature:
            return as_tensor(X), None
        Z = self._rows(X)
        C, nz, np_ = cosine_matrix(Z, psi["proto"])
        S = softmax_temp(C, self.config.tau, axis=1)
        G = np.einsum("nij,mj->mni", psi["W"], Z) + psi["b"][None]
        Zt = Z + np.einsum("mn,mni->mi", S, G)
        return Zt.reshape(X.shape), _FeatureCache(as_tensor(X), Z, C, nz, np_, S, G)

    def feature_backward(self, psi: ParamSet, cache: _FeatureCache | None, dXt: Tensor) -> tuple[ParamSet, Tensor]:
        grads = ParamSet({k: np.zeros_like(psi[k]) for k in FEATURE_PARAMS})
        if cache is None:
            return grads, dXt
        U = dXt.reshape(cache.Z.shape)
        S, Z = cache.S, cache.Z
        grads["b"] = S.T @ U
        grads["W"] = np.einsum("mn,mi,mj->nij", S, U, Z)
        dS = np.einsum("mni,mi->mn", cache.G, U)
        dC = softmax_temp_backward(S, dS, self.config.tau, axis=1)
        dZ_cos, grads["proto"] = cosine_matrix_backward(Z, psi["proto"], cache.C, cache.nz, cache.np_, dC)
        dZ = U + np.einsum("mn,nij,mi->mj", S, psi["W"], U) + dZ_cos
        return grads, dZ.reshape(cache.X.shape)

    def gate_scores_batch(self, psi: ParamSet, X: Tensor) -> Tensor:
        C, _, _ = cosine_matrix(self._rows(X), psi["proto"])
        return softmax_temp(C, self.config.tau, axis=1)

    # --- label gate -------------------------------------------------------------------

    def gate_input(self, X: Tensor, Xt: Tensor) -> Tensor:
        """Label gating reads adapted features (separate gate) or raw ones (shared gate)."""
        return Xt if self.separate_gate else X

    def label_gate_forward(self, psi: ParamSet, inp: Tensor) -> tuple[Tensor, _GateCache]:
        inp = as_tensor(inp)
        if self.separate_gate:
            V = inp @ psi["proj"].T
            protos = psi["label_proto"]
        else:
            V = self._rows(inp)
            protos = psi["proto"]
        C, nv, np_ = cosine_matrix(V, protos)
        S = softmax_temp(C, self.config.tau, axis=1)
        return S, _GateCache(inp, V, C, nv, np_, S)

    def label_gate_backward(self, psi: ParamSet, cache: _GateCache, dS: Tensor) -> tuple[ParamSet, Tensor]:
        grads = psi.zeros_like()
        dC = softmax_temp_backward(cache.S, dS, self.config.tau, axis=1)
        if self.separate_gate:
            dV, grads["label_proto"] = cosine_matrix_backward(cache.V, psi["label_proto"], cache.C, cache.nv,
                                                              cache.np_, dC)
            grads["proj"] = dV.T @ cache.inp
            return grads, dV @ psi["proj"]
        dV, grads["proto"] = cosine_matrix_backward(cache.V, psi["proto"], cache.C, cache.nv, cache.np_, dC)
        return grads, dV.reshape(cache.inp.shape)

    # --- label heads --------------------------------------------------------------------

    def adapt_labels(self, psi: ParamSet, S: Tensor, y: Tensor) -> Tensor:
        if not self.config.label:
            return as_tensor(y).copy()
        y = as_tensor(y)
        return y * (S @ psi["gamma"]) + S @ psi["beta"]

    def adapt_labels_backward(self, psi: ParamSet, S: Tensor, y: Tensor, d_out: Tensor) -> tuple[ParamSet, Tensor]:
        grads = psi.zeros_like()
        if not self.config.label:
            return grads, np.zeros_like(S)
        grads["gamma"] = S.T @ (d_out * y)
        grads["beta"] = S.T @ d_out
        dS = d_out[:, None] * (psi["gamma"][None, :] * y[:, None] + psi["beta"][None, :])
        return grads, dS

    def invert(self, psi: ParamSet, S: Tensor, ycheck: Tensor) -> Tensor:
        if not self.config.label:
            return as_tensor(ycheck).copy()
        self.check_gamma(psi)
        g, b = psi["gamma"], psi["beta"]
        return ((as_tensor(ycheck)[:, None] - b[None, :]) / g[None, :] * S).sum(axis=1)

    def invert_backward(self, psi: ParamSet, S: Tensor, ycheck: Tensor, d_out: Tensor) -> tuple[ParamSet, Tensor, Tensor]:
        """Returns (param grads, dS, d ycheck)."""
        grads = psi.zeros_like()
        if not self.config.label:
            return grads, np.zeros_like(S), d_out.copy()
        g, b = psi["gamma"], psi["beta"]
        resid = (ycheck[:, None] - b[None, :]) / g[None, :]
        dS = d_out[:, None] * resid
        grads["gamma"] = -np.sum(d_out[:, None] * S * resid / g[None, :], axis=0)
        grads["beta"] = -np.sum(d_out[:, None] * S / g[None, :], axis=0)
        return grads, dS, d_out * (S @ (1.0 / g))

    # --- task-level helpers -----------------------------------------------------------

    def adapt_train_set(self, psi: ParamSet, X: Tensor, y: Tensor) -> tuple[Tensor, Tensor]:
        Xt, _ = self.feature_forward(psi, X)
        S, _ = self.label_gate_forward(psi, self.gate_input(X, Xt))
        return Xt, self.adapt_labels(psi, S, y)

    def adapt_test_features(self, psi: ParamSet, X: Tensor) -> AdaptedTestFeatures:
        Xt, _ = self.feature_forward(psi, X)
        S, _ = self.label_gate_forward(psi, self.gate_input(X, Xt))
        return AdaptedTestFeatures(Xt, S)

    def invert_predictions(self, psi: ParamSet, adapted: AdaptedTestFeatures, ycheck: Tensor) -> Tensor:
        return self.invert(psi, adapted.label_scores, ycheck)


# --- single-sample views -----------------------------------------------------------------


def gate_scores(adapter: DataAdapter, psi: ParamSet, x: Tensor) -> Tensor:
    """Feature-head scores for one feature vector (flat layout) or one step (timeseries)."""
    x = as_tensor(x)
    C, _, _ = cosine_matrix(x[None, :], psi["proto"])
    return softmax_temp(C[0], adapter.config.tau)


def adapt_feature(adapter: DataAdapter, psi: ParamSet, x: Tensor) -> Tensor:
    return adapter.feature_forward(psi, as_tensor(x)[None, :])[0][0]


def label_gate_scores(adapter: DataAdapter, psi: ParamSet, x: Tensor) -> Tensor:
    return adapter.label_gate_forward(psi, as_tensor(x)[None, :])[0][0]


def adapt_label(adapter: DataAdapter, psi: ParamSet, x: Tensor, y: float) -> float:
    S = label_gate_scores(adapter, psi, x)[None, :]
    return float(adapter.adapt_labels(psi, S, np.array([y]))[0])


def invert_prediction(adapter: DataAdapter, psi: ParamSet, x: Tensor, ycheck: float) -> float:
    S = label_gate_scores(adapter, psi, x)[None, :]
    return float(adapter.invert(psi, S, np.array([ycheck]))[0])


# --- checkable maps ------------------------------------------------------------------------


@dataclass
class GateMap:
    adapter: DataAdapter

    def forward(self, psi, X):
        return self.adapter.gate_scores_batch(psi, X)

    def backward(self, psi, X, upstream):
        a = self.adapter
        Z = a._rows(X)
        C, nz, np_ = cosine_matrix(Z, psi["proto"])
        S = softmax_temp(C, a.config.tau, axis=1)
        dC = softmax_temp_backward(S, upstream, a.config.tau, axis=1)
        dZ, dP = cosine_matrix_backward(Z, psi["proto"], C, nz, np_, dC)
        grads = psi.zeros_like()
        grads["proto"] = dP
        return grads, dZ.reshape(as_tensor(X).shape)


@dataclass
class FeatureMap:
    adapter: DataAdapter

    def forward(self, psi, X):
        return self.adapter.feature_forward(psi, X)[0]

    def backward(self, psi, X, upstream):
        _, cache = self.adapter.feature_forward(psi, X)
        g, dX = self.adapter.feature_backward(psi, cache, upstream)
        full = psi.zeros_like()
        full.update(g)
        return full, dX


@dataclass
class LabelGateMap:
    adapter: DataAdapter

    def forward(self, psi, inp):
        return self.adapter.label_gate_forward(psi, inp)[0]

    def backward(self, psi, inp, upstream):
        _, cache = self.adapter.label_gate_forward(psi, inp)
        return self.adapter.label_gate_backward(psi, cache, upstream)


@dataclass
class LabelMap:
    """(gate input, y) -> adapted labels."""

    adapter: DataAdapter

    def forward(self, psi, inp):
        G, y = inp
        S, _ = self.adapter.label_gate_forward(psi, G)
        return self.adapter.adapt_labels(psi, S, y)

    def backward(self, psi, inp, upstream):
        G, y = inp
        S, cache = self.adapter.label_gate_forward(psi, G)
        g1, dS = self.adapter.adapt_labels_backward(psi, S, y, upstream)
        g2, dG = self.adapter.label_gate_backward(psi, cache, dS)
        return g1.add(g2), dG


@dataclass
class InverseCompositeMap:
    """(raw X, intermediate prediction) -> final prediction through G, label gate and inverse heads."""

    adapter: DataAdapter

    def forward(self, psi, inp):
        X, ycheck = inp
        a = self.adapter
        Xt, _ = a.feature_forward(psi, X)
        S, _ = a.label_gate_forward(psi, a.gate_input(X, Xt))
        return a.invert(psi, S, ycheck)

    def backward(self, psi, inp, upstream):
        X, ycheck = inp
        a = self.adapter
        Xt, fc = a.feature_forward(psi, X)
        S, gc = a.label_gate_forward(psi, a.gate_input(X, Xt))
        g_inv, dS, dy = a.invert_backward(psi, S, ycheck, upstream)
        g_gate, dG = a.label_gate_backward(psi, gc, dS)
        total = g_inv.add(g_gate)
        if a.separate_gate:
            g_feat, _ = a.feature_backward(psi, fc, dG)
            for k in FEATURE_PARAMS:
                total[k] = total[k] + g_feat[k]
        return total, dy
