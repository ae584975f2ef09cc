"""Reference gradients by explicit chain-rule path enumeration.

Runs its own scalar LIF forward pass, then for every parameter entry sums
the product of edge weights and spike derivatives along each same-step path
from that parameter to every output neuron.  Earlier accumulations are held
constant, exactly as the engines assume.  The number of paths grows
exponentially with depth, so only tiny networks are accepted.
"""

from __future__ import annotations

import math

import numpy as np

from .gradients import GradientSet
from .losses import LossSpec, loss_E, loss_F
from .network import NetworkSpec, as_input_batch

__all__ = ["oracle_unrolled_grad", "MAX_LAYERS", "MAX_WIDTH", "MAX_STEPS"]

MAX_LAYERS = 3
MAX_WIDTH = 4
MAX_STEPS = 4


def _sigmoid_slope(u: float, v_th: float, beta: float) -> float:
    z = (v_th - u) / beta
    if z > 700.0 or z < -700.0:
        return 0.0
    e = math.exp(z)
    return (1.0 / beta) * e / (1.0 + e) ** 2


def _scalar_forward(spec: NetworkSpec, xs: list[list[float]]):
    lam, v_th = spec.params.lam, spec.params.v_th
    sizes = spec.layer_sizes
    N = spec.num_layers
    T = len(xs)
    c = spec.connection
    W = [w.tolist() for w in spec.weights]
    b = [v.tolist() for v in spec.biases]
    Wc = None if c is None else c.weight.tolist()

    s = [[[0.0] * sizes[l]] for l in range(N + 1)]
    u = [[[0.0] * sizes[l]] for l in range(N + 1)]
    acc = [[[0.0] * sizes[l]] for l in range(N + 1)]
    for t in range(1, T + 1):
        s[0].append(list(xs[t - 1]))
        u[0].append([0.0] * sizes[0])
        for l in range(1, N + 1):
            u_t, s_t = [], []
            for i in range(sizes[l]):
                drive = b[l - 1][i]
                for j in range(sizes[l - 1]):
                    drive += W[l - 1][i][j] * s[l - 1][t][j]
                if c is not None and c.target == l:
                    src = s[c.p][t] if c.kind == "feedforward" else s[c.p][t - 1]
                    for j in range(sizes[c.p]):
                        drive += Wc[i][j] * src[j]
                ui = lam * (u[l][t - 1][i] - v_th * s[l][t - 1][i]) + drive
                u_t.append(ui)
                s_t.append(1.0 if ui >= v_th else 0.0)
            u[l].append(u_t)
            s[l].append(s_t)
        for l in range(N + 1):
            acc[l].append([lam * a + si for a, si in zip(acc[l][t - 1], s[l][t])])
    return s, u, acc


def _edges(spec: NetworkSpec, l: int, i: int):
    """Same-step synapses leaving neuron ``i`` of layer ``l`` as ``(layer, j, weight)``."""
    out = []
    if l < spec.num_layers:
        col = spec.weights[l][:, i]
        out += [(l + 1, j, float(col[j])) for j in range(col.size)]
    c = spec.connection
    if c is not None and c.kind == "feedforward" and c.p == l:
        col = c.weight[:, i]
        out += [(c.target, j, float(col[j])) for j in range(col.size)]
    return out


def _single_time(spec, acc, factor, top, t, scale, engine) -> GradientSet:
    N = spec.num_layers
    sizes = spec.layer_sizes

    def downstream(l: int, i: int) -> float:
        if l == N:
            return top[i]
        total = 0.0
        for m, j, w in _edges(spec, l, i):
            total += w * factor[m][j] * downstream(m, j)
        return total

    gs = GradientSet.zeros_like(spec, engine)
    gs.t = t
    for l in range(N):
        for i in range(sizes[l + 1]):
            post = factor[l + 1][i] * downstream(l + 1, i)
            gs.db[l][i] = scale * post
            for j in range(sizes[l]):
                gs.dW[l][i, j] = scale * acc[l][t][j] * post
    c = spec.connection
    if c is not None:
        src_t = t if c.kind == "feedforward" else t - 1
        for i in range(sizes[c.target]):
            post = factor[c.target][i] * downstream(c.target, i)
            for j in range(sizes[c.p]):
                gs.dconn[i, j] = scale * acc[c.p][src_t][j] * post
    return gs


def oracle_unrolled_grad(
    spec: NetworkSpec,
    input_sequence,
    label: int,
    loss_spec: LossSpec,
    engine: str,
    t: int | None = None,
) -> GradientSet:
    """Ground-truth gradient for ``engine`` in {saf-e, ottt-o, ottt-a, saf-f, sr}.

    Per-step engines need ``t``.  Raises ``ValueError`` for networks beyond
    ``MAX_LAYERS`` spiking layers, ``MAX_WIDTH`` units per layer or
    ``MAX_STEPS`` time steps.
    """
    x = as_input_batch(input_sequence)
    if x.shape[1] != 1:
        raise ValueError("the oracle handles a single sample")
    T = x.shape[0]
    if spec.num_layers > MAX_LAYERS or max(spec.layer_sizes) > MAX_WIDTH or T > MAX_STEPS:
        raise ValueError(
            f"instance too large for path enumeration (limits: {MAX_LAYERS} layers, "
            f"{MAX_WIDTH} units, {MAX_STEPS} steps)"
        )
    xs = [row[0].tolist() for row in x]
    s, u, acc = _scalar_forward(spec, xs)
    N = spec.num_layers
    lam, v_th, beta = spec.params.lam, spec.params.v_th, spec.beta

    def sg_factors(step):
        return [None] + [[_sigmoid_slope(ui, v_th, beta) for ui in u[l][step]] for l in range(1, N + 1)]

    if engine in ("saf-e", "ottt-o"):
        if t is None or not 1 <= t <= T:
            raise ValueError("per-step oracle needs 1 <= t <= T")
        _, top = loss_E(np.array(s[N][t]), label, loss_spec, T)
        return _single_time(spec, acc, sg_factors(t), top.tolist(), t, 1.0, engine)

    if engine == "ottt-a":
        total = GradientSet.zeros_like(spec, engine)
        for step in range(1, T + 1):
            _, top = loss_E(np.array(s[N][step]), label, loss_spec, T)
            total.add_(_single_time(spec, acc, sg_factors(step), top.tolist(), step, 1.0, engine))
        total.t = T
        return total

    if engine in ("saf-f", "sr"):
        _, top = loss_F(np.array(acc[N][T]), label, loss_spec, lam, T)
        if engine == "saf-f":
            return _single_time(spec, acc, sg_factors(T), top.tolist(), T, 1.0, engine)
        norm = sum(lam ** (T - tau) for tau in range(T + 1))
        c = spec.connection
        factor = [None]
        for l in range(1, N + 1):
            row = []
            for i in range(spec.layer_sizes[l]):
                pre = float(spec.biases[l - 1][i])
                pre += sum(float(spec.weights[l - 1][i, j]) * acc[l - 1][T][j] / norm for j in range(spec.layer_sizes[l - 1]))
                if c is not None and c.target == l:
                    src_t = T if c.kind == "feedforward" else T - 1
                    pre += sum(float(c.weight[i, j]) * acc[c.p][src_t][j] / norm for j in range(spec.layer_sizes[c.p]))
                z = pre / v_th
                row.append(1.0 if 0.0 < z < 1.0 else 0.0)
            factor.append(row)
        return _single_time(spec, acc, factor, top.tolist(), T, 1.0 / v_th, engine)

    raise ValueError(f"unknown engine {engine!r}")
