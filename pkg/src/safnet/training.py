"""Training loop for the four engines, LIF-mode inference and run metrics."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .config import ExperimentConfig
from .data import Dataset, encode_inputs, load_delimited, load_idx, make_two_moons
from .gradients import GradientSet, grad_ottt_a, grad_ottt_o, grad_saf_e, grad_saf_f
from .losses import LossSpec, loss_E, loss_F
from .mathops import geometric_weight_sum, make_rng
from .network import ForwardTrace, LifRunner, NetworkSpec, SafRunner, forward_lif, forward_saf, random_network
from .neurons import NeuronParams

__all__ = [
    "SGDMomentum",
    "RunMetrics",
    "InferenceReport",
    "TrainingDiverged",
    "train",
    "infer_lif",
    "predict",
    "firing_rate_report",
    "load_datasets",
    "build_network",
    "write_metrics_csv",
]

log = logging.getLogger(__name__)

PER_STEP_ENGINES = ("saf-e", "ottt-o")


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, checkpoint: NetworkSpec, metrics: "RunMetrics"):
        super().__init__(message)
        self.checkpoint = checkpoint
        self.metrics = metrics


class SGDMomentum:
    """SGD with classical momentum and cosine-annealed step size.

    ``v <- momentum * v + g`` then ``theta <- theta - lr_k * v`` with
    ``lr_k = lr * 0.5 * (1 + cos(pi * k / total_steps))``.
    """

    def __init__(self, params: list[np.ndarray], lr: float, momentum: float, total_steps: int):
        self.params = params
        self.base_lr = lr
        self.momentum = momentum
        self.total_steps = max(int(total_steps), 1)
        self.buffers = [np.zeros_like(p) for p in params]
        self.step_count = 0

    def lr_at(self, k: int) -> float:
        return self.base_lr * 0.5 * (1.0 + math.cos(math.pi * k / self.total_steps))

    def step(self, grads: list[np.ndarray]) -> None:
        lr = self.lr_at(self.step_count)
        for p, v, g in zip(self.params, self.buffers, grads):
            v *= self.momentum
            v += g
            p -= lr * v
        self.step_count += 1


@dataclass
class RunMetrics:
    rows: list[dict] = field(default_factory=list)
    seconds_per_iteration: list[float] = field(default_factory=list)
    state_buffers: dict = field(default_factory=dict)
    iterations: int = 0

    def last(self, split: str) -> Optional[dict]:
        for row in reversed(self.rows):
            if row["split"] == split:
                return row
        return None


@dataclass
class InferenceReport:
    accuracy_lif: float
    accuracy_saf: float
    rates_lif: list[float]
    rates_saf: list[float]
    agreement: float

    @property
    def accuracy_delta(self) -> float:
        return abs(self.accuracy_lif - self.accuracy_saf)

    @property
    def total_rate_delta(self) -> float:
        return abs(_total_rate(self.rates_lif) - _total_rate(self.rates_saf))


def _total_rate(rates: list[float]) -> float:
    return float(np.mean(rates)) if rates else 0.0


def firing_rate_report(trace: ForwardTrace) -> list[float]:
    """Per-layer fraction of neuron-steps that fired, layers ``1..N``."""
    rates = []
    T = trace.T
    for l in range(1, trace.num_layers + 1):
        total = 0.0
        for t in range(1, T + 1):
            total += float(np.sum(trace.spikes(l, t)))
        width = trace.layer_sizes[l]
        rates.append(total / (T * width * trace.batch) if T else 0.0)
    return rates


def predict(trace: ForwardTrace) -> np.ndarray:
    """Argmax of the output weighted firing rate at ``T``; ties go to the lowest class."""
    T = trace.T
    rate = trace.a_hat(trace.num_layers, T) / geometric_weight_sum(trace.params.lam, T)
    return np.argmax(rate, axis=1)


def _load_one(path: str, labels: str, num_classes: int) -> Dataset:
    if labels:
        return load_idx(path, labels, num_classes or 10)
    return load_delimited(path, num_classes or None, normalize=False)


def load_datasets(cfg: ExperimentConfig) -> tuple[Dataset, Optional[Dataset]]:
    """Train and (optional) test sets, the test set normalized with the train record."""
    if cfg.dataset == "two-moons":
        train_ds = make_two_moons(cfg.n_samples, cfg.noise, cfg.seed)
        test_ds = make_two_moons(cfg.test_samples, cfg.noise, cfg.seed + 1) if cfg.test_samples else None
    else:
        train_ds = _load_one(cfg.dataset, cfg.labels, cfg.num_classes)
        test_ds = _load_one(cfg.test_dataset, cfg.test_labels, cfg.num_classes) if cfg.test_dataset else None
    if cfg.num_classes:
        train_ds.num_classes = cfg.num_classes
    if cfg.normalize:
        train_ds = train_ds.normalized()
        if test_ds is not None:
            test_ds = test_ds.normalized(train_ds.normalization)
    if test_ds is not None:
        test_ds.num_classes = train_ds.num_classes = max(train_ds.num_classes, test_ds.num_classes)
    return train_ds, test_ds


def build_network(cfg: ExperimentConfig, input_dim: int, num_classes: int) -> NetworkSpec:
    sizes = [input_dim, *cfg.hidden, num_classes]
    conn = None if cfg.connection == "none" else (cfg.connection, cfg.conn_p, cfg.conn_q)
    rng = make_rng(cfg.seed)
    return random_network(sizes, rng, NeuronParams(cfg.lam, cfg.v_th), cfg.beta, conn)


def _encode(cfg: ExperimentConfig, features: np.ndarray, rng) -> np.ndarray:
    return encode_inputs(features, cfg.T, cfg.encoding, rng)


def evaluate(spec: NetworkSpec, ds: Dataset, cfg: ExperimentConfig, mode: str, rng=None):
    x = _encode(cfg, ds.features, rng if rng is not None else make_rng(cfg.seed + 2))
    trace = forward_saf(spec, x) if mode == "saf" else forward_lif(spec, x)
    pred = predict(trace)
    acc = float(np.mean(pred == ds.labels)) if len(ds) else 0.0
    ls = LossSpec("final", cfg.alpha, spec.layer_sizes[-1])
    loss, _ = loss_F(trace.a_hat(spec.num_layers, cfg.T), ds.labels, ls, spec.params.lam, cfg.T)
    return acc, float(np.mean(loss)), firing_rate_report(trace), pred


def _run_batch(spec, opt, cfg, x, y, loss_spec_e, loss_spec_f) -> float:
    """One training iteration on a minibatch; returns its mean loss."""
    engine = cfg.engine
    B = x.shape[1]
    T = cfg.T
    N = spec.num_layers
    if engine in PER_STEP_ENGINES:
        runner = SafRunner(spec, B) if engine == "saf-e" else LifRunner(spec, B)
        grad_fn = grad_saf_e if engine == "saf-e" else grad_ottt_o
        pending: list[GradientSet] = []
        total_loss = 0.0
        for t in range(1, T + 1):
            runner.step(x[t - 1])
            trace = runner.trace
            value, _ = loss_E(trace.spikes(N, t), y, loss_spec_e, T)
            total_loss += float(np.mean(value))
            g = grad_fn(trace, t, y, spec, loss_spec_e, horizon=T)
            if cfg.accumulate or cfg.freeze_within_sequence:
                pending.append(g)
            else:
                opt.step(g.arrays())
        if cfg.accumulate:
            acc = GradientSet.zeros_like(spec, engine)
            for g in pending:
                acc.add_(g)
            opt.step(acc.arrays())
        elif cfg.freeze_within_sequence:
            for g in pending:
                opt.step(g.arrays())
        return total_loss
    if engine == "saf-f":
        trace = forward_saf(spec, x)
        g = grad_saf_f(trace, y, spec, loss_spec_f)
    else:
        trace = forward_lif(spec, x)
        g = grad_ottt_a(trace, y, spec, loss_spec_e)
    value, _ = loss_F(trace.a_hat(N, T), y, loss_spec_f, spec.params.lam, T)
    opt.step(g.arrays())
    return float(np.mean(value))


def train(cfg: ExperimentConfig, datasets=None, spec: Optional[NetworkSpec] = None):
    """Train per ``cfg``; returns ``(trained NetworkSpec, RunMetrics)``.

    Per-step engines take one optimizer step per time step (unless
    ``accumulate`` or ``freeze_within_sequence`` is set); final-step engines
    take one per minibatch.  ``max_iterations`` caps the number of minibatches.
    """
    train_ds, test_ds = datasets if datasets is not None else load_datasets(cfg)
    C = train_ds.num_classes
    if spec is None:
        spec = build_network(cfg, train_ds.feature_dim, C)
    mode = "saf" if cfg.engine.startswith("saf") else "lif"
    loss_spec_e = LossSpec("per-step", cfg.alpha, C)
    loss_spec_f = LossSpec("final", cfg.alpha, C)

    n = len(train_ds)
    n_batches = math.ceil(n / cfg.batch_size) if n else 0
    iterations = cfg.epochs * n_batches
    if cfg.max_iterations:
        iterations = min(iterations, cfg.max_iterations)
    steps_per_iter = cfg.T if (cfg.engine in PER_STEP_ENGINES and not cfg.accumulate) else 1
    opt = SGDMomentum(spec.parameters(), cfg.lr, cfg.momentum, iterations * steps_per_iter)

    order_rng = make_rng(cfg.seed + 3)
    enc_rng = make_rng(cfg.seed + 4)
    metrics = RunMetrics()
    done = 0
    for epoch in range(1, cfg.epochs + 1):
        if done >= iterations:
            break
        checkpoint = spec.copy()
        perm = order_rng.permutation(n)
        epoch_loss = 0.0
        batches = 0
        for start in range(0, n, cfg.batch_size):
            if done >= iterations:
                break
            idx = perm[start : start + cfg.batch_size]
            x = _encode(cfg, train_ds.features[idx], enc_rng)
            y = train_ds.labels[idx]
            t0 = time.perf_counter()
            loss = _run_batch(spec, opt, cfg, x, y, loss_spec_e, loss_spec_f)
            metrics.seconds_per_iteration.append(time.perf_counter() - t0)
            if not math.isfinite(loss) or not all(np.all(np.isfinite(p)) for p in spec.parameters()):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}", checkpoint, metrics)
            epoch_loss += loss
            batches += 1
            done += 1
        metrics.iterations = done
        acc, _, rates, _ = evaluate(spec, train_ds, cfg, mode)
        metrics.rows.append(_row(epoch, "train", acc, epoch_loss / max(batches, 1), rates))
        if test_ds is not None and len(test_ds):
            tacc, tloss, trates, _ = evaluate(spec, test_ds, cfg, mode)
            metrics.rows.append(_row(epoch, "test", tacc, tloss, trates))
        log.info("epoch %d: train acc %.4f loss %.4f", epoch, acc, epoch_loss / max(batches, 1))
    return spec, metrics


def _row(epoch, split, acc, loss, rates) -> dict:
    row = {"epoch": epoch, "split": split, "accuracy": acc, "loss": loss, "total_rate": _total_rate(rates)}
    for l, r in enumerate(rates, 1):
        row[f"rate_l{l}"] = r
    return row


def infer_lif(spec: NetworkSpec, ds: Dataset, T: int, encoding: str = "constant", seed: int = 0) -> InferenceReport:
    """Classify with an LIF network and with the accumulation form on the same inputs."""
    x = encode_inputs(ds.features, T, encoding, make_rng(seed))
    lif = forward_lif(spec, x)
    saf = forward_saf(spec, x)
    p_lif, p_saf = predict(lif), predict(saf)
    n = max(len(ds), 1)
    return InferenceReport(
        accuracy_lif=float(np.sum(p_lif == ds.labels)) / n,
        accuracy_saf=float(np.sum(p_saf == ds.labels)) / n,
        rates_lif=firing_rate_report(lif),
        rates_saf=firing_rate_report(saf),
        agreement=float(np.sum(p_lif == p_saf)) / n,
    )


def write_metrics_csv(metrics: RunMetrics, path) -> None:
    if not metrics.rows:
        return
    keys = list(dict.fromkeys(k for row in metrics.rows for k in row))
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        for row in metrics.rows:
            w.writerow(row)
