"""Model adapter: slow weights and the lower-level fine-tune that produces task weights."""

from __future__ import annotations

from dataclasses import dataclass

from .engine import ConfigError, EmptyBatchError, ParamSet, Tensor, sgd_step
from .models import ForecastModel


@dataclass
class ModelAdapterState:
    phi: ParamSet
    eta_theta: float
    inner_steps: int = 1

    def __post_init__(self):
        if self.eta_theta < 0:
            raise ConfigError("eta_theta must be non-negative")
        if self.inner_steps < 1:
            raise ConfigError("inner_steps must be >= 1")


def lower_level_update(ma: ModelAdapterState, model: ForecastModel, X_adapted: Tensor,
                       y_adapted: Tensor) -> tuple[ParamSet, float]:
    """Plain gradient step(s) from ``phi`` on the adapted incremental data.

    Returns the task weights and the training loss evaluated at ``phi``.
    """
    if len(y_adapted) == 0:
        raise EmptyBatchError("adapted training set is empty")
    theta = ma.phi
    first_loss = None
    for _ in range(ma.inner_steps):
        loss, grads = model.loss_and_grads(theta, X_adapted, y_adapted)
        if first_loss is None:
            first_loss = loss
        theta = sgd_step(theta, grads, ma.eta_theta)
    return theta, first_loss
