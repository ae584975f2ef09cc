"""Fully connected spiking networks and their two forward runners.

Layer 0 is the input; layers ``1..N`` are spiking.  ``weights[l]`` maps layer
``l`` to layer ``l + 1`` (rows are postsynaptic) and ``biases[l]`` belongs to
layer ``l + 1``.  A network may carry one extra connection from layer ``p``
into layer ``q + 1``: same-step for a feedforward connection (``q >= p``),
one-step delayed for a feedback connection (``q < p``).
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .mathops import as_vector, matvec
from .neurons import LifState, NeuronParams, SafState, lif_step, saf_step

__all__ = [
    "Connection",
    "NetworkSpec",
    "ForwardTrace",
    "LifRunner",
    "SafRunner",
    "StateBufferReport",
    "forward_lif",
    "forward_saf",
    "count_state_buffers",
    "random_network",
    "as_input_batch",
]


@dataclass
class Connection:
    kind: str  # "feedforward" | "feedback"
    p: int
    q: int
    weight: np.ndarray

    @property
    def target(self) -> int:
        return self.q + 1


@dataclass
class NetworkSpec:
    layer_sizes: list[int]
    params: NeuronParams
    beta: float
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    connection: Optional[Connection] = None

    def __post_init__(self):
        self.layer_sizes = [int(n) for n in self.layer_sizes]
        self.weights = [np.array(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.array(b, dtype=np.float64).reshape(-1) for b in self.biases]
        if self.connection is not None:
            self.connection.weight = np.array(self.connection.weight, dtype=np.float64)
        self.validate()

    @property
    def num_layers(self) -> int:
        return len(self.layer_sizes) - 1

    def validate(self) -> None:
        n = self.layer_sizes
        N = self.num_layers
        if N < 0:
            raise ValueError("layer_sizes must contain at least the input layer")
        if any(k < 1 for k in n):
            raise ValueError(f"layer widths must be positive: {n}")
        if self.beta <= 0:
            raise ValueError("surrogate width beta must be positive")
        if len(self.weights) != N or len(self.biases) != N:
            raise ValueError(f"expected {N} weight matrices and bias vectors")
        for l in range(N):
            if self.weights[l].shape != (n[l + 1], n[l]):
                raise ValueError(f"W{l} has shape {self.weights[l].shape}, expected {(n[l + 1], n[l])}")
            if self.biases[l].shape != (n[l + 1],):
                raise ValueError(f"b{l + 1} has shape {self.biases[l].shape}, expected {(n[l + 1],)}")
        c = self.connection
        if c is None:
            return
        if c.kind == "feedforward":
            if not (0 <= c.p <= c.q <= N - 1):
                raise ValueError(f"feedforward connection needs 0 <= p <= q <= N-1, got p={c.p}, q={c.q}")
        elif c.kind == "feedback":
            if not (0 <= c.q < c.p <= N):
                raise ValueError(f"feedback connection needs 0 <= q < p <= N, got p={c.p}, q={c.q}")
        else:
            raise ValueError(f"unknown connection kind {c.kind!r}")
        expected = (n[c.q + 1], n[c.p])
        if c.weight.shape != expected:
            raise ValueError(f"connection weight has shape {c.weight.shape}, expected {expected}")

    def parameters(self) -> list[np.ndarray]:
        """Trainable arrays in a fixed order: weights, biases, connection."""
        ps = list(self.weights) + list(self.biases)
        if self.connection is not None:
            ps.append(self.connection.weight)
        return ps

    def copy(self) -> "NetworkSpec":
        return copy.deepcopy(self)

    # -- text serialization ------------------------------------------------

    def to_text(self) -> str:
        lines = [
            "# safnet network",
            "layer_sizes = " + ",".join(str(k) for k in self.layer_sizes),
            f"lambda = {self.params.lam!r}",
            f"v_th = {self.params.v_th!r}",
            f"beta = {self.beta!r}",
        ]
        c = self.connection
        if c is None:
            lines.append("connection = none")
        else:
            lines += [f"connection = {c.kind}", f"conn_p = {c.p}", f"conn_q = {c.q}"]
        for l, w in enumerate(self.weights):
            lines.append(f"W{l} = " + _fmt(w))
        for l, b in enumerate(self.biases):
            lines.append(f"b{l + 1} = " + _fmt(b))
        if c is not None:
            lines.append("W_conn = " + _fmt(c.weight))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "NetworkSpec":
        kv = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected key = value")
            k, v = line.split("=", 1)
            kv[k.strip()] = v.strip()
        sizes = [int(x) for x in kv["layer_sizes"].split(",")]
        N = len(sizes) - 1
        weights = [_parse(kv[f"W{l}"], (sizes[l + 1], sizes[l])) for l in range(N)]
        biases = [_parse(kv[f"b{l + 1}"], (sizes[l + 1],)) for l in range(N)]
        conn = None
        kind = kv.get("connection", "none")
        if kind != "none":
            p, q = int(kv["conn_p"]), int(kv["conn_q"])
            conn = Connection(kind, p, q, _parse(kv["W_conn"], (sizes[q + 1], sizes[p])))
        params = NeuronParams(lam=float(kv["lambda"]), v_th=float(kv["v_th"]))
        return cls(sizes, params, float(kv["beta"]), weights, biases, conn)

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path) -> "NetworkSpec":
        return cls.from_text(Path(path).read_text())


def _fmt(a: np.ndarray) -> str:
    return " ".join(repr(float(x)) for x in np.asarray(a).reshape(-1))


def _parse(s: str, shape) -> np.ndarray:
    vals = np.array([float(x) for x in s.split()], dtype=np.float64)
    if vals.size != int(np.prod(shape)):
        raise ValueError(f"expected {int(np.prod(shape))} values, found {vals.size}")
    return vals.reshape(shape)


def random_network(
    layer_sizes: Sequence[int],
    rng: np.random.Generator,
    params: NeuronParams = NeuronParams(),
    beta: float = 4.0,
    connection: Optional[tuple[str, int, int]] = None,
    bias_range: tuple[float, float] = (0.0, 0.3),

) -> NetworkSpec:
    """Uniform ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]`` weights, uniform biases."""
    sizes = [int(k) for k in layer_sizes]
    weights, biases = [], []
    for l in range(len(sizes) - 1):
        bound = 1.0 / np.sqrt(sizes[l])
        weights.append(rng.uniform(-bound, bound, size=(sizes[l + 1], sizes[l])))
        biases.append(rng.uniform(bias_range[0], bias_range[1], size=sizes[l + 1]))
    conn = None
    if connection is not None:
        kind, p, q = connection
        bound = 1.0 / np.sqrt(sizes[p])
        conn = Connection(kind, p, q, rng.uniform(-bound, bound, size=(sizes[q + 1], sizes[p])))
    return NetworkSpec(sizes, params, beta, weights, biases, conn)


def as_input_batch(inputs) -> np.ndarray:
    """Coerce an input sequence to shape ``(T, B, n0)``."""
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None, None]
    elif x.ndim == 2:
        x = x[:, None, :]
    if x.ndim != 3:
        raise ValueError(f"input sequence must be (T, n0) or (T, B, n0), got shape {x.shape}")
    if x.shape[0] < 1:
        raise ValueError("input sequence must have at least one step")
    return x


class ForwardTrace:
    """Per-step record of a forward pass, indexed ``[layer][t]`` with ``t = 0..T``.

    LIF mode stores spikes ``s``, membrane potentials ``u`` and the running
    accumulation ``a_hat``.  SAF mode stores only ``a_hat`` and ``U_hat``;
    spikes and ``u`` are recovered on demand.  Arrays have shape ``(B, n_l)``.
    """

    def __init__(self, mode: str, spec: NetworkSpec, batch: int, u0=None):
        if mode not in ("lif", "saf"):
            raise ValueError(f"unknown trace mode {mode!r}")
        self.mode = mode
        self.params = spec.params
        self.layer_sizes = list(spec.layer_sizes)
        self.batch = batch
        sizes = self.layer_sizes
        self.acc = [[np.zeros((batch, k))] for k in sizes]
        init = [np.zeros((batch, k)) for k in sizes]
        if u0 is not None:
            for l in range(1, len(sizes)):
                init[l] = np.array(np.broadcast_to(u0[l - 1], (batch, sizes[l])), dtype=np.float64)
        self.pot = [[init[l]] for l in range(len(sizes))]
        self.spk = [[np.zeros((batch, k))] for k in sizes] if mode == "lif" else None

    @property
    def T(self) -> int:
        return len(self.acc[0]) - 1

    @property
    def num_layers(self) -> int:
        return len(self.layer_sizes) - 1

    def _check_t(self, t: int) -> None:
        if not 0 <= t <= self.T:
            raise IndexError(f"time {t} outside trace range 0..{self.T}")

    def a_hat(self, l: int, t: int) -> np.ndarray:
        self._check_t(t)
        return self.acc[l][t]

    def potential(self, l: int, t: int) -> np.ndarray:
        """``u`` in LIF mode, ``U_hat`` in SAF mode."""
        self._check_t(t)
        return self.pot[l][t]

    def effective_u(self, l: int, t: int) -> np.ndarray:
        """Membrane potential ``u[t]``; in SAF mode ``U_hat[t] - v_th*lam*a_hat[t-1]``."""
        if self.mode == "lif":
            return self.potential(l, t)
        if t < 1:
            return self.potential(l, 0)
        p = self.params
        return self.pot[l][t] - p.v_th * (p.lam * self.acc[l][t - 1])

    def spikes(self, l: int, t: int) -> np.ndarray:
        self._check_t(t)
        if self.mode == "lif":
            return self.spk[l][t]
        if t == 0:
            return np.zeros_like(self.acc[l][0])
        diff = self.acc[l][t] - self.params.lam * self.acc[l][t - 1]
        return diff if l == 0 else np.rint(diff)

    def vector_count(self, l: int) -> int:
        n = len(self.acc[l]) + len(self.pot[l])
        if self.spk is not None:
            n += len(self.spk[l])
        return n


class _Runner:
    mode = ""

    def __init__(self, spec: NetworkSpec, batch: int = 1, record: bool = True, u0=None):
        self.spec = spec
        self.batch = batch
        self.trace = ForwardTrace(self.mode, spec, batch, u0) if record else None
        self.t = 0

    def run(self, inputs) -> None:
        for x in as_input_batch(inputs):
            self.step(x)


class LifRunner(_Runner):
    """Steps an LIF network; also carries the running accumulation OTTT needs."""

    mode = "lif"

    def __init__(self, spec, batch=1, record=True, u0=None, track_acc=True):
        super().__init__(spec, batch, record, u0)
        sizes = spec.layer_sizes
        self.states = [None] + [
            LifState.zeros((batch, sizes[l]), None if u0 is None else u0[l - 1]) for l in range(1, len(sizes))
        ]
        self.track_acc = track_acc
        self.acc = [np.zeros((batch, k)) for k in sizes] if track_acc else None

    def step(self, x) -> list[np.ndarray]:
        spec = self.spec
        x = np.broadcast_to(as_vector(x), (self.batch, spec.layer_sizes[0]))
        conn = spec.connection
        lam = spec.params.lam
        spikes = [x]
        prev_spikes = [None] + [st.s_prev for st in self.states[1:]]
        for l in range(spec.num_layers):
            drive = matvec(spec.weights[l], spikes[l]) + spec.biases[l]
            if conn is not None and conn.target == l + 1:
                src = spikes[conn.p] if conn.kind == "feedforward" else prev_spikes[conn.p]
                drive = drive + matvec(conn.weight, src)
            self.states[l + 1], s = lif_step(self.states[l + 1], drive, spec.params)
            spikes.append(s)
        if self.track_acc:
            self.acc = [lam * a + s for a, s in zip(self.acc, spikes)]
        self.t += 1
        if self.trace is not None:
            tr = self.trace
            for l in range(len(spikes)):
                tr.spk[l].append(np.array(spikes[l]))
                tr.acc[l].append(self.acc[l])
                tr.pot[l].append(self.states[l].u if l > 0 else np.zeros_like(spikes[0]))
        return spikes

    def retained_vectors(self) -> list[int]:
        counts = []
        for l in range(1, self.spec.num_layers + 1):
            n = 2 + (1 if self.track_acc else 0)
            if self.trace is not None:
                n += self.trace.vector_count(l)
            counts.append(n)
        return counts


class SafRunner(_Runner):
    """Steps the accumulation form; only ``a_hat`` crosses layer boundaries."""

    mode = "saf"

    def __init__(self, spec, batch=1, record=True, u0=None):
        super().__init__(spec, batch, record, u0)
        sizes = spec.layer_sizes
        self.states = [None] + [
            SafState.zeros((batch, sizes[l]), None if u0 is None else u0[l - 1]) for l in range(1, len(sizes))
        ]
        self.in_acc = np.zeros((batch, sizes[0]))
        self.in_acc_prev = np.zeros((batch, sizes[0]))

    def _delta(self, l: int) -> np.ndarray:
        lam = self.spec.params.lam
        if l == 0:
            return self.in_acc - lam * self.in_acc_prev
        st = self.states[l]
        return st.a_hat - lam * st.a_hat_prev

    def step(self, x) -> list[np.ndarray]:
        spec = self.spec
        lam = spec.params.lam
        x = np.broadcast_to(as_vector(x), (self.batch, spec.layer_sizes[0]))
        conn = spec.connection
        # A feedback source is read before it is updated this step, so its
        # current difference is the previous step's increment.
        fb_delta = None
        if conn is not None and conn.kind == "feedback":
            fb_delta = self._delta(conn.p)
        self.in_acc_prev = self.in_acc
        self.in_acc = lam * self.in_acc + x
        spikes = [x]
        for l in range(spec.num_layers):
            drive = matvec(spec.weights[l], self._delta(l))
            if conn is not None and conn.target == l + 1:
                src = self._delta(conn.p) if conn.kind == "feedforward" else fb_delta
                drive = drive + matvec(conn.weight, src)
            self.states[l + 1], s = saf_step(self.states[l + 1], drive, spec.biases[l], spec.params)
            spikes.append(s)
        self.t += 1
        if self.trace is not None:
            tr = self.trace
            tr.acc[0].append(self.in_acc)
            tr.pot[0].append(np.zeros_like(self.in_acc))
            for l in range(1, spec.num_layers + 1):
                tr.acc[l].append(self.states[l].a_hat)
                tr.pot[l].append(self.states[l].U_hat)
        return spikes

    def retained_vectors(self) -> list[int]:
        counts = []
        for l in range(1, self.spec.num_layers + 1):
            n = len(self.states[l].vectors())
            if self.trace is not None:
                n += self.trace.vector_count(l)
            counts.append(n)
        return counts


def forward_lif(spec: NetworkSpec, input_sequence, u0=None) -> ForwardTrace:
    x = as_input_batch(input_sequence)
    runner = LifRunner(spec, batch=x.shape[1], u0=u0)
    runner.run(x)
    return runner.trace


def forward_saf(spec: NetworkSpec, input_sequence, u0=None) -> ForwardTrace:
    x = as_input_batch(input_sequence)
    runner = SafRunner(spec, batch=x.shape[1], u0=u0)
    runner.run(x)
    return runner.trace


@dataclass
class StateBufferReport:
    mode: str
    T: int
    per_layer: list[int] = field(default_factory=list)

    @property
    def total(self) -> int:
        return sum(self.per_layer)


_BUFFER_MODES = {
    "saf": (SafRunner, False),
    "saf-trace": (SafRunner, True),
    "lif": (LifRunner, False),
    "lif-trace": (LifRunner, True),
}


def count_state_buffers(spec: NetworkSpec, mode: str, T: int = 8) -> StateBufferReport:
    """Run an instrumented forward pass and report the peak vectors retained per layer.

    Modes: ``saf`` (streaming accumulation), ``saf-trace`` (accumulations kept
    for a later backward pass), ``lif`` (streaming inference, no running
    accumulation) and ``lif-trace`` (spikes, potentials and accumulations
    kept per step, as a traced OTTT backward needs).
    """
    if mode not in _BUFFER_MODES:
        raise ValueError(f"unknown mode {mode!r}; choose from {sorted(_BUFFER_MODES)}")
    if spec.num_layers == 0:
        return StateBufferReport(mode, T, [])
    cls, record = _BUFFER_MODES[mode]
    kwargs = {"track_acc": False} if mode == "lif" else {}
    runner = cls(spec, batch=1, record=record, **kwargs)
    peak = [0] * spec.num_layers
    x = np.zeros(spec.layer_sizes[0])
    for _ in range(T):
        runner.step(x)
        peak = [max(a, b) for a, b in zip(peak, runner.retained_vectors())]
    return StateBufferReport(mode, T, peak)
