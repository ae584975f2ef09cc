"""LIF and spike-accumulation neuron state machines.

The LIF neuron keeps its membrane potential ``u`` and last spike vector.  The
accumulation neuron keeps the weighted spike count ``a_hat`` and the
potential accumulation ``U_hat`` instead, and never needs past potentials.
Both are driven by the same presynaptic terms and emit identical spikes up
to floating-point rounding at exact threshold crossings.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .mathops import as_vector, geometric_weight_sum

__all__ = [
    "NeuronParams",
    "LifState",
    "SafState",
    "heaviside",
    "lif_step",
    "saf_step",
    "saf_to_lif",
    "lif_to_saf",
    "weighted_firing_rate",
    "weighted_mean_input",
    "saf_closed_form_potential",
]


@dataclass(frozen=True)
class NeuronParams:
    lam: float = 0.5
    v_th: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.lam <= 1.0:
            raise ValueError(f"leak must lie in (0, 1], got {self.lam}")
        if not self.v_th > 0.0:
            raise ValueError(f"threshold must be positive, got {self.v_th}")


@dataclass
class LifState:
    u: np.ndarray
    s_prev: np.ndarray

    @classmethod
    def zeros(cls, shape, u0=None) -> "LifState":
        u = np.zeros(shape) if u0 is None else np.array(np.broadcast_to(u0, shape), dtype=np.float64)
        return cls(u=u, s_prev=np.zeros(shape))


@dataclass
class SafState:
    a_hat: np.ndarray
    a_hat_prev: np.ndarray
    U_hat: np.ndarray
    U0: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, shape, u0=None) -> "SafState":
        U0 = np.zeros(shape) if u0 is None else np.array(np.broadcast_to(u0, shape), dtype=np.float64)
        return cls(a_hat=np.zeros(shape), a_hat_prev=np.zeros(shape), U_hat=U0.copy(), U0=U0)

    def vectors(self) -> list[np.ndarray]:
        return [self.a_hat, self.a_hat_prev, self.U_hat, self.U0]


def heaviside(x: np.ndarray) -> np.ndarray:
    # H(0) = 1: a potential sitting exactly on threshold fires.
    return (x >= 0.0).astype(np.float64)


def _check_shape(name, a, b):
    if a.shape != b.shape:
        raise ValueError(f"{name}: shape {a.shape} does not match state shape {b.shape}")


def lif_step(state: LifState, drive, params: NeuronParams) -> tuple[LifState, np.ndarray]:
    """Advance one LIF step with subtractive reset.

    ``drive`` is the full synaptic input for this step, bias included.
    """
    drive = as_vector(drive)
    _check_shape("lif_step", drive, state.u)
    u = params.lam * (state.u - params.v_th * state.s_prev) + drive
    spikes = heaviside(u - params.v_th)
    return LifState(u=u, s_prev=spikes), spikes


def saf_step(state: SafState, drive, bias, params: NeuronParams) -> tuple[SafState, np.ndarray]:
    """Advance one accumulation step.

    ``drive`` is ``W @ (a_hat_pre[t] - lam * a_hat_pre[t-1])`` plus any
    connection terms; ``bias`` is added once per step.
    """
    drive = as_vector(drive)
    bias = as_vector(bias)
    _check_shape("saf_step", drive, state.U_hat)
    lam, v_th = params.lam, params.v_th
    U_hat = lam * state.U_hat + (drive + bias)
    decayed = lam * state.a_hat
    spikes = heaviside(U_hat - v_th * (decayed + 1.0))
    a_hat = decayed + spikes
    new = SafState(a_hat=a_hat, a_hat_prev=state.a_hat, U_hat=U_hat, U0=state.U0, t=state.t + 1)
    return new, spikes


def saf_to_lif(state: SafState, params: NeuronParams) -> tuple[np.ndarray, np.ndarray]:
    """Recover ``(u[t], s[t])`` from an accumulation state.

    The spike difference ``a_hat[t] - lam * a_hat[t-1]`` is an integer by
    construction, so it is rounded to remove float residue.
    """
    if state.t < 1:
        raise ValueError("saf_to_lif needs at least one completed step")
    decayed = params.lam * state.a_hat_prev
    u = state.U_hat - params.v_th * decayed
    s = np.rint(state.a_hat - decayed)
    return u, s


def lif_to_saf(spike_history: Sequence, u, params: NeuronParams) -> SafState:
    """Rebuild an accumulation state from spikes ``s[1..t]`` and ``u[t]``."""
    u = as_vector(u)
    a_hat = np.zeros_like(u)
    a_hat_prev = np.zeros_like(u)
    for s in spike_history:
        a_hat_prev = a_hat
        a_hat = params.lam * a_hat + as_vector(s)
    U_hat = u + params.v_th * (params.lam * a_hat_prev)
    return SafState(
        a_hat=a_hat, a_hat_prev=a_hat_prev, U_hat=U_hat, U0=np.zeros_like(u), t=len(spike_history)
    )


def weighted_firing_rate(a_hat, lam: float, t: int) -> np.ndarray:
    return as_vector(a_hat) / geometric_weight_sum(lam, t)


def weighted_mean_input(inputs: Sequence, lam: float) -> np.ndarray:
    """Leak-weighted mean of ``inputs[0..t]``, newest weighted most."""
    if len(inputs) == 0:
        raise ValueError("weighted_mean_input needs at least one input")
    t = len(inputs) - 1
    num = np.zeros_like(as_vector(inputs[0]))
    for tau, x in enumerate(inputs):
        num = num + lam ** (t - tau) * as_vector(x)
    return num / geometric_weight_sum(lam, t)


def saf_closed_form_potential(weighted_acc, bias, U0, lam: float, t: int) -> np.ndarray:
    """Non-recursive potential accumulation at step ``t``.

    ``weighted_acc`` is the synaptic term ``W @ a_hat_pre[t]`` (plus any
    connection term).  The bias coefficient is ``1 + lam + ... + lam**(t-1)``,
    which is what unrolling the recurrence gives.
    """
    coef = 0.0
    for tau in range(t):
        coef += lam**tau
    return as_vector(weighted_acc) + as_vector(bias) * coef + lam**t * as_vector(U0)
