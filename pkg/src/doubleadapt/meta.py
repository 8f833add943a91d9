"""Upper-level optimization of the data adapter and the model adapter.

Gradients are first order: the task weights are treated as constants when
differentiating the test loss with respect to the adapter parameters, and the
gradient at the task weights is applied to the slow weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .adapter import LABEL_PARAMS, DataAdapter
from .engine import AdamState, ConfigError, EmptyBatchError, ParamSet, Tensor, adam_step, mse, mse_grad
from .models import ForecastModel


@dataclass(frozen=True)
class MetaOptConfig:
    alpha: float = 0.5
    eta_phi: float = 0.001
    eta_psi: float = 0.01
    reg_mode: str = "fixed"
    sigma: float = 1.0

    def validate(self) -> None:
        if self.reg_mode not in ("fixed", "adaptive"):
            raise ConfigError(f"reg_mode must be fixed|adaptive, got {self.reg_mode!r}")
        if self.alpha < 0 or self.eta_phi < 0 or self.eta_psi < 0:
            raise ConfigError("alpha, eta_phi and eta_psi must be non-negative")
        if not self.sigma > 0:
            raise ConfigError("sigma must be positive")


@dataclass(frozen=True)
class MetaLossBreakdown:
    l_mse: float
    l_reg: float
    l_test: float
    l_test_at_phi: float | None = None
    reg_coef: float | None = None


def adaptive_coefficient(l_test_at_phi: float, l_test_at_theta: float, sigma: float) -> float:
    """Weight on the regularizer gradient for the label heads; negative when the inner step hurt."""
    return (l_test_at_phi - l_test_at_theta) / (2.0 * sigma**2)


def _merge(total: ParamSet, part: ParamSet, scale: float = 1.0) -> None:
    for k, v in part.items():
        total[k] = total[k] + scale * v


def _test_side(adapter, model, psi, params, X_test, y_test, need_grads=True):
    Xt, fc = adapter.feature_forward(psi, X_test)
    S, gc = adapter.label_gate_forward(psi, adapter.gate_input(X_test, Xt))
    ycheck = model.forward(params, Xt)
    yhat = adapter.invert(psi, S, ycheck)
    loss = mse(yhat, y_test)
    if not need_grads:
        return loss, None, None
    d_yhat = mse_grad(yhat, y_test)
    g_psi, dS, d_ycheck = adapter.invert_backward(psi, S, ycheck, d_yhat)
    g_model, dXt = model.backward(params, Xt, d_ycheck)
    g_gate, dG = adapter.label_gate_backward(psi, gc, dS)
    g_psi = g_psi.add(g_gate)
    if adapter.separate_gate:
        dXt = dXt + dG
    g_feat, _ = adapter.feature_backward(psi, fc, dXt)
    _merge(g_psi, g_feat)
    return loss, g_psi, g_model


def _reg_side(adapter, psi, X_train, y_train):
    Xt, fc = adapter.feature_forward(psi, X_train)
    S, gc = adapter.label_gate_forward(psi, adapter.gate_input(X_train, Xt))
    ytil = adapter.adapt_labels(psi, S, y_train)
    loss = mse(ytil, y_train)
    g_psi, dS = adapter.adapt_labels_backward(psi, S, y_train, mse_grad(ytil, y_train))
    g_gate, dG = adapter.label_gate_backward(psi, gc, dS)
    g_psi = g_psi.add(g_gate)
    if adapter.separate_gate:
        g_feat, _ = adapter.feature_backward(psi, fc, dG)
        _merge(g_psi, g_feat)
    return loss, g_psi


def test_loss(adapter: DataAdapter, model: ForecastModel, psi: ParamSet, theta: ParamSet,
              X_train: Tensor, y_train: Tensor, X_test: Tensor, y_test: Tensor, alpha: float) -> MetaLossBreakdown:
    if len(y_test) == 0:
        raise EmptyBatchError("empty test set")
    l_mse, _, _ = _test_side(adapter, model, psi, theta, X_test, y_test, need_grads=False)
    l_reg, _ = _reg_side(adapter, psi, X_train, y_train)
    return MetaLossBreakdown(l_mse, l_reg, l_mse + alpha * l_reg)


def meta_gradients(adapter: DataAdapter, model: ForecastModel, psi: ParamSet, theta: ParamSet,
                   X_train: Tensor, y_train: Tensor, X_test: Tensor, y_test: Tensor, config: MetaOptConfig,
                   phi: ParamSet | None = None) -> tuple[MetaLossBreakdown, ParamSet, ParamSet]:
    """Losses, the adapter gradient and the test-loss gradient at ``theta``.

    In adaptive mode ``phi`` is required: the label-head part of the regularizer
    gradient is weighted by :func:`adaptive_coefficient` instead of ``alpha``.
    """
    if len(y_test) == 0:
        raise EmptyBatchError("empty test set")
    l_mse, g_mse, g_theta = _test_side(adapter, model, psi, theta, X_test, y_test)
    l_reg, g_reg = _reg_side(adapter, psi, X_train, y_train)
    grad_psi = g_mse.clone()
    l_phi = coef = None
    if config.reg_mode == "adaptive":
        if phi is None:
            raise ConfigError("adaptive regularization needs the test loss at phi")
        l_phi, _, _ = _test_side(adapter, model, psi, phi, X_test, y_test, need_grads=False)
        coef = adaptive_coefficient(l_phi, l_mse, config.sigma)
        for k in grad_psi:
            weight = coef if k in LABEL_PARAMS else config.alpha
            grad_psi[k] = grad_psi[k] + weight * g_reg[k]
    else:
        _merge(grad_psi, g_reg, config.alpha)
    breakdown = MetaLossBreakdown(l_mse, l_reg, l_mse + config.alpha * l_reg, l_phi, coef)
    return breakdown, grad_psi, g_theta


def update_model_adapter(phi: ParamSet, grad_theta: ParamSet, state: AdamState, eta_phi: float) -> tuple[ParamSet, AdamState]:
    """Apply the gradient taken at the task weights to the slow weights."""
    return adam_step(phi, grad_theta, state, eta_phi)


def update_data_adapter(adapter: DataAdapter, psi: ParamSet, grad_psi: ParamSet, state: AdamState,
                        eta_psi: float) -> tuple[ParamSet, AdamState]:
    new, state = adam_step(psi, grad_psi, state, eta_psi)
    return adapter.project_gamma(new), state


@dataclass
class MetaObjectiveMap:
    """psi -> l_mse + alpha * l_reg with theta frozen, for gradient checking."""

    adapter: DataAdapter
    model: ForecastModel
    theta: ParamSet
    alpha: float

    def forward(self, psi, data):
        X_train, y_train, X_test, y_test = data
        b = test_loss(self.adapter, self.model, psi, self.theta, X_train, y_train, X_test, y_test, self.alpha)
        return np.array([b.l_test])

    def backward(self, psi, data, upstream):
        X_train, y_train, X_test, y_test = data
        _, g, _ = meta_gradients(self.adapter, self.model, psi, self.theta, X_train, y_train, X_test, y_test,
                                 MetaOptConfig(alpha=self.alpha))
        return g.scale(float(np.sum(upstream))), None
