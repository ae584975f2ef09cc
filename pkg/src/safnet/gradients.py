"""Backward engines over a forward trace.

All per-step engines treat earlier accumulations as constants with respect to
the parameters, so the gradient at step ``t`` only travels down the layer
stack at that step.  A weight gradient is then the outer product of the
postsynaptic back signal ``g[l+1]`` with the presynaptic accumulation
``a_hat[l]``.  Gradient matrices follow the weight layout: row = postsynaptic
neuron, column = presynaptic neuron.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .losses import LossSpec, SurrogateParams, clamp_derivative, loss_E, loss_F, sg
from .mathops import geometric_weight_sum, matvec, outer_sum, rmatvec
from .network import ForwardTrace, NetworkSpec

__all__ = [
    "GradientSet",
    "BackSignal",
    "surrogate_factors",
    "clamp_factors",
    "back_signal",
    "grad_saf_e",
    "grad_saf_f",
    "grad_ottt_o",
    "grad_ottt_a",
    "grad_spike_representation",
    "ENGINES",
]

ENGINES = ("saf-e", "saf-f", "ottt-o", "ottt-a")


@dataclass
class GradientSet:
    dW: list[np.ndarray]
    db: list[np.ndarray]
    dconn: Optional[np.ndarray] = None
    conn_kind: Optional[str] = None
    engine: str = ""
    t: Optional[int] = None

    @property
    def dWf(self) -> Optional[np.ndarray]:
        return self.dconn if self.conn_kind == "feedforward" else None

    @property
    def dWb(self) -> Optional[np.ndarray]:
        return self.dconn if self.conn_kind == "feedback" else None

    def arrays(self) -> list[np.ndarray]:
        """Gradients in the same order as ``NetworkSpec.parameters``."""
        out = list(self.dW) + list(self.db)
        if self.dconn is not None:
            out.append(self.dconn)
        return out

    def named(self) -> list[tuple[str, np.ndarray]]:
        names = [f"W{l}" for l in range(len(self.dW))] + [f"b{l + 1}" for l in range(len(self.db))]
        if self.dconn is not None:
            names.append("W_f" if self.conn_kind == "feedforward" else "W_b")
        return list(zip(names, self.arrays()))

    def flat(self) -> np.ndarray:
        arrs = self.arrays()
        if not arrs:
            return np.zeros(0)
        return np.concatenate([a.reshape(-1) for a in arrs])

    @classmethod
    def zeros_like(cls, spec: NetworkSpec, engine: str = "") -> "GradientSet":
        c = spec.connection
        return cls(
            dW=[np.zeros_like(w) for w in spec.weights],
            db=[np.zeros_like(b) for b in spec.biases],
            dconn=None if c is None else np.zeros_like(c.weight),
            conn_kind=None if c is None else c.kind,
            engine=engine,
        )

    def add_(self, other: "GradientSet") -> "GradientSet":
        for a, b in zip(self.arrays(), other.arrays()):
            a += b
        return self

    def scaled(self, k: float) -> "GradientSet":
        return GradientSet(
            dW=[k * a for a in self.dW],
            db=[k * a for a in self.db],
            dconn=None if self.dconn is None else k * self.dconn,
            conn_kind=self.conn_kind,
            engine=self.engine,
            t=self.t,
        )

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())

    def to_csv(self, fh=None) -> Optional[str]:
        """Write ``engine,layer,index,value`` rows; returns the text if no file given."""
        own = fh is None
        if own:
            fh = io.StringIO()
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["engine", "layer", "index", "value"])
        for name, arr in self.named():
            for idx, v in enumerate(arr.reshape(-1)):
                w.writerow([self.engine, name, idx, repr(float(v))])
        return fh.getvalue() if own else None

    @classmethod
    def from_csv(cls, text: str, spec: NetworkSpec) -> "GradientSet":
        gs = cls.zeros_like(spec)
        arrays = dict(gs.named())
        for row in csv.DictReader(io.StringIO(text)):
            gs.engine = row["engine"]
            arrays[row["layer"]].reshape(-1)[int(row["index"])] = float(row["value"])
        return gs


@dataclass
class BackSignal:
    """``g[l]`` is the loss gradient w.r.t. layer ``l``'s potential; ``g[0]`` is unused."""

    g: list[Optional[np.ndarray]] = field(default_factory=list)

    def __getitem__(self, l: int) -> np.ndarray:
        return self.g[l]


def _check_time(trace: ForwardTrace, t: int) -> None:
    if not 1 <= t <= trace.T:
        raise ValueError(f"time {t} outside 1..{trace.T}")


def _require_mode(trace: ForwardTrace, mode: str, engine: str) -> None:
    if trace.mode != mode:
        raise ValueError(f"{engine} needs a {mode}-mode trace, got {trace.mode}")


def surrogate_factors(trace: ForwardTrace, t: int, spec: NetworkSpec) -> list[Optional[np.ndarray]]:
    """Surrogate spike derivative per layer, evaluated at the membrane potential ``u[t]``."""
    p = SurrogateParams(spec.beta, spec.params.v_th)
    return [None] + [sg(trace.effective_u(l, t), p) for l in range(1, spec.num_layers + 1)]


def clamp_factors(trace: ForwardTrace, spec: NetworkSpec) -> list[Optional[np.ndarray]]:
    """Clamp derivatives of the rate-model pre-activations at the final step.

    Layer ``l+1`` gets ``clamp'((W^l a^l + b^{l+1} [+ conn]) / v_th)`` with
    rates ``a = a_hat[T] / Lambda``; a feedback source is read at ``T - 1``.
    """
    T = trace.T
    norm = geometric_weight_sum(spec.params.lam, T)
    c = spec.connection
    out = [None]
    for l in range(spec.num_layers):
        pre = matvec(spec.weights[l], trace.a_hat(l, T) / norm) + spec.biases[l]
        if c is not None and c.target == l + 1:
            src_t = T if c.kind == "feedforward" else T - 1
            pre = pre + matvec(c.weight, trace.a_hat(c.p, src_t) / norm)
        out.append(clamp_derivative(pre / spec.params.v_th))
    return out


def back_signal(
    trace: ForwardTrace,
    t: int,
    top_grad: np.ndarray,
    spec: NetworkSpec,
    factors: Optional[Sequence] = None,
) -> BackSignal:
    """Propagate ``dL/d a_hat^N[t]`` down the layer stack at step ``t``.

    ``g[i] = delta[i] * factor[i]`` and ``delta[i-1] = W^{i-1}.T g[i]``.  A
    feedforward connection adds ``W_f.T g[q+1]`` to ``delta[p]``; a feedback
    connection reads step ``t - 1`` and contributes no same-step path.
    """
    _check_time(trace, t)
    if factors is None:
        factors = surrogate_factors(trace, t, spec)
    N = spec.num_layers
    c = spec.connection
    top = np.atleast_2d(np.asarray(top_grad, dtype=np.float64))
    delta: list[Optional[np.ndarray]] = [None] * (N + 1)
    delta[N] = top
    g: list[Optional[np.ndarray]] = [None] * (N + 1)
    for i in range(N, 0, -1):
        g[i] = delta[i] * factors[i]
        if i - 1 >= 1:
            contrib = rmatvec(spec.weights[i - 1], g[i])
            delta[i - 1] = contrib if delta[i - 1] is None else delta[i - 1] + contrib
        if c is not None and c.kind == "feedforward" and c.target == i and c.p >= 1:
            contrib = rmatvec(c.weight, g[i])
            delta[c.p] = contrib if delta[c.p] is None else delta[c.p] + contrib
    return BackSignal(g)


def _batch_mean(g: np.ndarray) -> np.ndarray:
    total = np.zeros(g.shape[1])
    for row in g:
        total += row
    return total / g.shape[0]


def _assemble(trace, t, sig: BackSignal, spec: NetworkSpec, engine: str, scale: float = 1.0) -> GradientSet:
    B = trace.batch
    N = spec.num_layers
    dW = [outer_sum(sig[l + 1], trace.a_hat(l, t)) / B for l in range(N)]
    db = [_batch_mean(sig[l + 1]) for l in range(N)]
    dconn, kind = None, None
    c = spec.connection
    if c is not None:
        kind = c.kind
        src_t = t if c.kind == "feedforward" else t - 1
        dconn = outer_sum(sig[c.target], trace.a_hat(c.p, src_t)) / B
    gs = GradientSet(dW, db, dconn, kind, engine, t)
    return gs if scale == 1.0 else gs.scaled(scale)


def _per_step(trace, t, label, spec, loss_spec, horizon, engine) -> GradientSet:
    _check_time(trace, t)
    T = trace.T if horizon is None else horizon
    N = spec.num_layers
    _, top = loss_E(trace.spikes(N, t), np.broadcast_to(label, (trace.batch,)), loss_spec, T)
    sig = back_signal(trace, t, top, spec)
    return _assemble(trace, t, sig, spec, engine)


def grad_saf_e(trace, t, label, spec, loss_spec, horizon=None) -> GradientSet:
    """Per-step accumulation-form gradient of ``L_E[t]``.

    ``horizon`` is the sequence length used to scale the loss; it defaults to
    the trace length and must be given when the trace is still growing.
    """
    _require_mode(trace, "saf", "SAF-E")
    return _per_step(trace, t, label, spec, loss_spec, horizon, "saf-e")


def grad_ottt_o(trace, t, label, spec, loss_spec, horizon=None) -> GradientSet:
    _require_mode(trace, "lif", "OTTT_O")
    return _per_step(trace, t, label, spec, loss_spec, horizon, "ottt-o")


def grad_ottt_a(trace, label, spec, loss_spec) -> GradientSet:
    """Sum of the per-step OTTT gradients over ``t = 1..T``, ascending."""
    _require_mode(trace, "lif", "OTTT_A")
    total = GradientSet.zeros_like(spec, "ottt-a")
    for t in range(1, trace.T + 1):
        total.add_(grad_ottt_o(trace, t, label, spec, loss_spec))
    total.t = trace.T
    return total


def grad_saf_f(trace, label, spec, loss_spec, factors: str = "surrogate") -> GradientSet:
    """Final-step gradient of ``L_F``.

    ``factors="clamp"`` swaps the surrogate for the clamp derivatives of the
    rate model, the configuration under which the rate-based gradient matches
    exactly up to ``v_th``.
    """
    _require_mode(trace, "saf", "SAF-F")
    T = trace.T
    N = spec.num_layers
    _, top = loss_F(trace.a_hat(N, T), np.broadcast_to(label, (trace.batch,)), loss_spec, spec.params.lam, T)
    if factors == "surrogate":
        fac = surrogate_factors(trace, T, spec)
    elif factors == "clamp":
        fac = clamp_factors(trace, spec)
    else:
        raise ValueError(f"unknown factor mode {factors!r}")
    sig = back_signal(trace, T, top, spec, fac)
    return _assemble(trace, T, sig, spec, "saf-f")


def grad_spike_representation(trace, label, spec, loss_spec) -> GradientSet:
    """Rate-representation gradient of ``L_F`` built from clamp derivatives.

    Uses explicit per-sample Jacobian products ``diag(d) W`` rather than the
    shared back-signal routine.  Each gradient carries the ``1 / v_th`` factor
    of the rate model; biases are treated as weights on a unit presynaptic
    accumulation, as in the other engines.
    """
    T = trace.T
    N = spec.num_layers
    c = spec.connection
    lam, v_th = spec.params.lam, spec.params.v_th
    labels = np.broadcast_to(label, (trace.batch,))
    _, top = loss_F(trace.a_hat(N, T), labels, loss_spec, lam, T)
    d = clamp_factors(trace, spec)
    out = GradientSet.zeros_like(spec, "sr")
    out.t = T
    for b in range(trace.batch):
        rows: list[Optional[np.ndarray]] = [None] * (N + 1)
        upstream: list[Optional[np.ndarray]] = [None] * (N + 1)
        upstream[N] = top[b]
        for i in range(N, 0, -1):
            rows[i] = upstream[i] * d[i][b]
            if i - 1 >= 1:
                jac = spec.weights[i - 1]
                v = rows[i] @ jac
                upstream[i - 1] = v if upstream[i - 1] is None else upstream[i - 1] + v
            if c is not None and c.kind == "feedforward" and c.target == i and c.p >= 1:
                v = rows[i] @ c.weight
                upstream[c.p] = v if upstream[c.p] is None else upstream[c.p] + v
        for l in range(N):
            out.dW[l] += np.outer(rows[l + 1], trace.a_hat(l, T)[b]) / v_th
            out.db[l] += rows[l + 1] / v_th
        if c is not None:
            src_t = T if c.kind == "feedforward" else T - 1
            out.dconn += np.outer(rows[c.target], trace.a_hat(c.p, src_t)[b]) / v_th
    return out.scaled(1.0 / trace.batch)
