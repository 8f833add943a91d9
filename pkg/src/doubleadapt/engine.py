"""Dense numerical kernel: primitives with analytic gradients, optimizers, gradient checking.

Tensors are plain ``numpy.ndarray`` objects in float64. Parameter collections are
:class:`ParamSet`, an ordered name -> array mapping.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Any, Protocol

import numpy as np

Tensor = np.ndarray


class DimensionError(ValueError):
    pass


class ConfigError(ValueError):
    pass


class EmptyBatchError(ValueError):
    pass


def as_tensor(values: Any) -> Tensor:
    return np.asarray(values, dtype=np.float64)


class ParamSet(dict):
    """Ordered mapping of parameter name to float64 array.

    Operations return new instances; arrays are never shared between a ParamSet
    and its clone.
    """

    def __init__(self, entries=None, **kwargs):
        super().__init__()
        items = dict(entries or {}, **kwargs)
        for name, value in items.items():
            self[name] = as_tensor(value).copy()

    def clone(self) -> "ParamSet":
        return ParamSet({k: v.copy() for k, v in self.items()})

    def zeros_like(self) -> "ParamSet":
        return ParamSet({k: np.zeros_like(v) for k, v in self.items()})

    def check_compatible(self, other: "ParamSet") -> None:
        if list(self.keys()) != list(other.keys()):
            raise DimensionError(f"parameter names differ: {list(self)} vs {list(other)}")
        for k, v in self.items():
            if v.shape != other[k].shape:
                raise DimensionError(f"shape mismatch for {k!r}: {v.shape} vs {other[k].shape}")

    def axpy(self, alpha: float, other: "ParamSet") -> "ParamSet":
        """Return ``self + alpha * other``."""
        self.check_compatible(other)
        return ParamSet({k: v + alpha * other[k] for k, v in self.items()})

    def scale(self, alpha: float) -> "ParamSet":
        return ParamSet({k: alpha * v for k, v in self.items()})

    def add(self, other: "ParamSet") -> "ParamSet":
        return self.axpy(1.0, other)

    def num_values(self) -> int:
        return int(sum(v.size for v in self.values()))

    def flatten(self) -> Tensor:
        if not self:
            return np.zeros(0)
        return np.concatenate([v.ravel() for v in self.values()])

    def unflatten(self, flat: Tensor) -> "ParamSet":
        out, pos = ParamSet(), 0
        for k, v in self.items():
            out[k] = np.asarray(flat[pos : pos + v.size], dtype=np.float64).reshape(v.shape).copy()
            pos += v.size
        return out

    def allclose(self, other: "ParamSet", atol: float = 0.0) -> bool:
        if list(self) != list(other):
            return False
        return all(v.shape == other[k].shape and np.allclose(v, other[k], rtol=0, atol=atol) for k, v in self.items())

    def checksum(self) -> str:
        h = hashlib.sha256()
        for k, v in self.items():
            h.update(k.encode())
            h.update(np.ascontiguousarray(v, dtype=np.float64).tobytes())
        return h.hexdigest()


# --- primitives -------------------------------------------------------------


def affine(W: Tensor, b: Tensor, x: Tensor) -> Tensor:
    W, b, x = as_tensor(W), as_tensor(b), as_tensor(x)
    if W.ndim != 2 or b.shape != (W.shape[0],) or x.shape != (W.shape[1],):
        raise DimensionError(f"affine: W{W.shape}, b{b.shape} incompatible with x{x.shape}")
    return W @ x + b


def affine_backward(W: Tensor, b: Tensor, x: Tensor, upstream: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    """Gradients (dW, db, dx) of ``upstream . (Wx + b)``."""
    upstream = as_tensor(upstream)
    return np.outer(upstream, x), upstream.copy(), as_tensor(W).T @ upstream


def cosine_similarity(a: Tensor, b: Tensor) -> float:
    """Cosine similarity; 0.0 when either vector has zero norm."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"cosine_similarity: {a.shape} vs {b.shape}")
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def cosine_matrix(A: Tensor, B: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    """Pairwise cosine between rows of A (m, d) and rows of B (k, d).

    Returns the (m, k) similarity matrix and the row norms of A and B. Pairs with a
    zero-norm row score 0.
    """
    na = np.linalg.norm(A, axis=1)
    nb = np.linalg.norm(B, axis=1)
    denom = np.outer(na, nb)
    safe = np.where(denom > 0, denom, 1.0)
    C = np.where(denom > 0, (A @ B.T) / safe, 0.0)
    return C, na, nb


def cosine_matrix_backward(A: Tensor, B: Tensor, C: Tensor, na: Tensor, nb: Tensor, dC: Tensor) -> tuple[Tensor, Tensor]:
    """Gradients wrt A and B given upstream dC for :func:`cosine_matrix`."""
    valid = np.outer(na > 0, nb > 0)
    dC = np.where(valid, dC, 0.0)
    inv_na = np.where(na > 0, 1.0 / np.where(na > 0, na, 1.0), 0.0)
    inv_nb = np.where(nb > 0, 1.0 / np.where(nb > 0, nb, 1.0), 0.0)
    scaled = dC * np.outer(inv_na, inv_nb)
    dA = scaled @ B - (np.sum(dC * C, axis=1) * inv_na**2)[:, None] * A
    dB = scaled.T @ A - (np.sum(dC * C, axis=0) * inv_nb**2)[:, None] * B
    return dA, dB


def softmax_temp(logits: Tensor, tau: float, axis: int = -1) -> Tensor:
    if not tau > 0:
        raise ConfigError(f"softmax temperature must be positive, got {tau}")
    z = as_tensor(logits) / tau
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def softmax_temp_backward(s: Tensor, ds: Tensor, tau: float, axis: int = -1) -> Tensor:
    return s * (ds - np.sum(s * ds, axis=axis, keepdims=True)) / tau


def mse(pred: Tensor, target: Tensor) -> float:
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise DimensionError(f"mse: {pred.shape} vs {target.shape}")
    if pred.size == 0:
        raise EmptyBatchError("mse of an empty batch")
    return float(np.mean((pred - target) ** 2))


def mse_grad(pred: Tensor, target: Tensor) -> Tensor:
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.size == 0:
        raise EmptyBatchError("mse of an empty batch")
    return 2.0 * (pred - target) / pred.size


# --- optimizers -------------------------------------------------------------


def sgd_step(params: ParamSet, grads: ParamSet, eta: float) -> ParamSet:
    if eta < 0:
        raise ConfigError(f"learning rate must be non-negative, got {eta}")
    return params.axpy(-eta, grads)


@dataclass
class AdamState:
    first_moment: ParamSet
    second_moment: ParamSet
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def fresh(cls, params: ParamSet, **kwargs) -> "AdamState":
        return cls(params.zeros_like(), params.zeros_like(), **kwargs)

    def clone(self) -> "AdamState":
        return AdamState(self.first_moment.clone(), self.second_moment.clone(), self.step_count,
                         self.beta1, self.beta2, self.epsilon)


def adam_step(params: ParamSet, grads: ParamSet, state: AdamState, eta: float) -> tuple[ParamSet, AdamState]:
    params.check_compatible(grads)
    params.check_compatible(state.first_moment)
    t = state.step_count + 1
    b1, b2 = state.beta1, state.beta2
    m, v, new = ParamSet(), ParamSet(), ParamSet()
    for k, p in params.items():
        g = grads[k]
        m[k] = b1 * state.first_moment[k] + (1 - b1) * g
        v[k] = b2 * state.second_moment[k] + (1 - b2) * g * g
        m_hat = m[k] / (1 - b1**t)
        v_hat = v[k] / (1 - b2**t)
        new[k] = p - eta * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return new, AdamState(m, v, t, b1, b2, state.epsilon)


# --- gradient checking ------------------------------------------------------


class DifferentiableMap(Protocol):
    def forward(self, params: ParamSet, input: Any) -> Tensor: ...

    def backward(self, params: ParamSet, input: Any, upstream: Tensor) -> tuple[ParamSet, Any]: ...


def finite_difference_check(fmap: DifferentiableMap, params: ParamSet, input: Any, eps: float = 1e-6,
                            seed: int = 0) -> float:
    """Max relative error between analytic and central-difference parameter gradients.

    The map output is reduced to a scalar through a fixed random projection so that
    every output coordinate contributes.
    """
    if not eps > 0:
        raise ConfigError("eps must be positive")
    out = as_tensor(fmap.forward(params, input))
    proj = np.random.default_rng(seed).standard_normal(out.shape)
    analytic, _ = fmap.backward(params, input, proj)
    worst = 0.0
    for name, value in params.items():
        grad = as_tensor(analytic[name])
        for idx in np.ndindex(value.shape):
            hi, lo = params.clone(), params.clone()
            hi[name][idx] += eps
            lo[name][idx] -= eps
            f_hi = float(np.sum(proj * fmap.forward(hi, input)))
            f_lo = float(np.sum(proj * fmap.forward(lo, input)))
            numeric = (f_hi - f_lo) / (2 * eps)
            a = float(grad[idx])
            if not (math.isfinite(numeric) and math.isfinite(a)):
                return math.inf
            worst = max(worst, abs(a - numeric) / max(1e-12, abs(numeric)))
    return worst


@dataclass
class AffineMap:
    """``x -> Wx + b`` over a batch of rows, as a checkable map."""

    def forward(self, params: ParamSet, input: Tensor) -> Tensor:
        return as_tensor(input) @ params["W"].T + params["b"]

    def backward(self, params: ParamSet, input: Tensor, upstream: Tensor) -> tuple[ParamSet, Tensor]:
        X = as_tensor(input)
        grads = ParamSet(W=upstream.T @ X, b=upstream.sum(axis=0))
        return grads, upstream @ params["W"]


@dataclass
class ConstantMap:
    value: Tensor = field(default_factory=lambda: np.ones(1))

    def forward(self, params: ParamSet, input: Any) -> Tensor:
        return self.value.copy()

    def backward(self, params: ParamSet, input: Any, upstream: Tensor) -> tuple[ParamSet, Any]:
        return params.zeros_like(), None
