"""Sigmoid-derivative surrogate gradient and the CE/MSE mixture losses."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mathops import as_vector, geometric_weight_sum

__all__ = [
    "SurrogateParams",
    "LossSpec",
    "sg",
    "clamp_derivative",
    "mixed_loss",
    "loss_E",
    "loss_F",
]


@dataclass(frozen=True)
class SurrogateParams:
    beta: float = 4.0
    v_th: float = 1.0

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be positive")


@dataclass(frozen=True)
class LossSpec:
    kind: str = "per-step"  # "per-step" | "final"
    alpha: float = 0.05
    num_classes: int = 2

    def __post_init__(self):
        if self.kind not in ("per-step", "final"):
            raise ValueError(f"loss kind must be 'per-step' or 'final', got {self.kind!r}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.num_classes < 1:
            raise ValueError("num_classes must be positive")


def sg(u, p: SurrogateParams) -> np.ndarray:
    """Derivative of ``sigmoid((u - v_th) / beta)`` with respect to ``u``.

    Evaluated through ``|u - v_th|`` so the exponential never overflows.
    """
    z = np.abs(as_vector(u) - p.v_th) / p.beta
    e = np.exp(-z)
    return e / (p.beta * (1.0 + e) ** 2)


def clamp_derivative(x) -> np.ndarray:
    """Derivative of ``min(max(0, x), 1)``; both kinks count as saturated."""
    x = as_vector(x)
    return ((x > 0.0) & (x < 1.0)).astype(np.float64)


def _labels(label, batch_shape, num_classes) -> np.ndarray:
    y = np.asarray(label, dtype=np.int64)
    y = np.broadcast_to(y, batch_shape)
    if np.any(y < 0) or np.any(y >= num_classes):
        raise ValueError(f"label out of range for {num_classes} classes: {label}")
    return y


def mixed_loss(z, label, spec: LossSpec) -> tuple[np.ndarray, np.ndarray]:
    """``(1 - alpha) * CE(softmax(z), y) + alpha * MSE(z, onehot(y))`` and its gradient.

    ``z`` has shape ``(C,)`` or ``(B, C)``; the value has the batch shape.
    """
    z = as_vector(z)
    C = z.shape[-1]
    if C != spec.num_classes:
        raise ValueError(f"output width {C} does not match num_classes={spec.num_classes}")
    y = _labels(label, z.shape[:-1], C)
    onehot = np.zeros_like(z)
    np.put_along_axis(onehot, y[..., None], 1.0, axis=-1)

    shifted = z - np.max(z, axis=-1, keepdims=True)
    expz = np.exp(shifted)
    denom = np.sum(expz, axis=-1, keepdims=True)
    logp = shifted - np.log(denom)
    ce = -np.sum(onehot * logp, axis=-1)
    resid = z - onehot
    mse = np.mean(resid**2, axis=-1)

    a = spec.alpha
    value = (1.0 - a) * ce + a * mse
    grad = (1.0 - a) * (expz / denom - onehot) + a * (2.0 / C) * resid
    return value, grad


def loss_E(s_N_t, label, spec: LossSpec, T: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-step loss on the output spikes, divided by the horizon ``T``."""
    value, grad = mixed_loss(s_N_t, label, spec)
    return value / T, grad / T


def loss_F(a_hat_N_T, label, spec: LossSpec, lam: float, T: int) -> tuple[np.ndarray, np.ndarray]:
    """Final-step loss on the weighted firing rate ``a_hat / Lambda``.

    The returned gradient is with respect to ``a_hat`` and so carries the
    ``1 / Lambda`` factor.
    """
    norm = geometric_weight_sum(lam, T)
    value, grad = mixed_loss(as_vector(a_hat_N_T) / norm, label, spec)
    return value, grad / norm
