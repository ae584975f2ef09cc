"""Randomized equivalence checks between the accumulation and LIF forms.

Each check builds a seeded random network and input, runs both sides and
returns a :class:`ComparisonReport`.  Suites run many seeds and merge the
reports in seed order.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from .gradients import GradientSet, clamp_factors, grad_ottt_o, grad_saf_e, grad_saf_f, grad_spike_representation
from .losses import LossSpec, loss_F
from .mathops import geometric_weight_sum, make_rng
from .network import ForwardTrace, NetworkSpec, forward_lif, forward_saf, random_network
from .neurons import NeuronParams

__all__ = [
    "TrialConfig",
    "Trial",
    "ComparisonReport",
    "SuiteResult",
    "build_trial",
    "random_trial_config",
    "check_forward_equivalence",
    "check_per_step_identity",
    "check_final_step_scale",
    "check_feedback_direction",
    "check_theorem1",
    "check_theorem2",
    "check_theorem3",
    "implicit_sr_gradient",
    "gradient_similarity",
    "relative_diff",
    "run_suite",
    "run_verify",
    "FIRING_FLOOR",
    "REL_TOL",
]

FIRING_FLOOR = 0.02
MAX_RESAMPLES = 100
REL_TOL = 1e-10
COND_LIMIT = 1e12


@dataclass(frozen=True)
class TrialConfig:
    seed: int
    layer_sizes: tuple
    T: int
    lam: float = 0.5
    v_th: float = 1.0
    beta: float = 4.0
    connection: str = "none"
    conn_p: int = 0
    conn_q: int = 0
    input_mode: str = "constant"
    margin_guard: float = 1e-9
    alpha: float = 0.05

    def __post_init__(self):
        if self.input_mode not in ("constant", "spikes", "zero"):
            raise ValueError(f"input_mode must be constant, spikes or zero, got {self.input_mode!r}")
        if self.T < 1:
            raise ValueError("T must be >= 1")

    @property
    def connection_tuple(self):
        return None if self.connection == "none" else (self.connection, self.conn_p, self.conn_q)


@dataclass
class Trial:
    config: TrialConfig
    spec: NetworkSpec
    inputs: np.ndarray
    label: int
    resamples: int
    firing_rate: float


@dataclass
class ComparisonReport:
    tag: str
    config: TrialConfig
    max_abs: dict = field(default_factory=dict)
    max_rel: dict = field(default_factory=dict)
    corr: float = float("nan")
    mae: float = float("nan")
    trips: int = 0
    passed: bool = True
    status: str = "ok"
    resamples: int = 0
    details: dict = field(default_factory=dict)

    @property
    def worst_rel(self) -> float:
        return max(self.max_rel.values(), default=0.0)

    @property
    def worst_abs(self) -> float:
        return max(self.max_abs.values(), default=0.0)

    def row(self) -> dict:
        out = {
            "tag": self.tag,
            "seed": self.config.seed,
            "status": self.status,
            "passed": self.passed,
            "worst_rel": self.worst_rel,
            "worst_abs": self.worst_abs,
            "corr": self.corr,
            "mae": self.mae,
            "trips": self.trips,
            "resamples": self.resamples,
        }
        out.update({f"detail_{k}": v for k, v in self.details.items()})
        return out


def relative_diff(a: np.ndarray, b: np.ndarray) -> float:
    """``max|a - b| / max(max|a|, max|b|)``; zero when both tensors are zero."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(float(np.max(np.abs(a), initial=0.0)), float(np.max(np.abs(b), initial=0.0)))
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(a - b))) / scale


def _compare(a: GradientSet, b: GradientSet, abs_out: dict, rel_out: dict, suffix: str = "") -> None:
    for (name, x), (_, y) in zip(a.named(), b.named()):
        key = name + suffix
        abs_out[key] = max(abs_out.get(key, 0.0), float(np.max(np.abs(x - y), initial=0.0)))
        rel_out[key] = max(rel_out.get(key, 0.0), relative_diff(x, y))


# ---------------------------------------------------------------- trials


def random_trial_config(
    seed: int,
    connection: str = "none",
    min_layers: int = 2,
    max_layers: int = 5,
    max_width: int = 64,
    max_T: int = 32,
    lams=(1.0, 0.5),
    input_modes=("constant", "spikes"),
    **overrides,
) -> TrialConfig:
    """Draw a trial shape from ``seed``: layer count, widths, horizon, leak, connection."""
    rng = make_rng(seed)
    n_layers = int(rng.integers(min_layers, max_layers + 1))
    sizes = tuple(int(k) for k in rng.integers(1, max_width + 1, size=n_layers + 1))
    T = int(rng.integers(1, max_T + 1))
    lam = float(lams[int(rng.integers(len(lams)))])
    mode = input_modes[int(rng.integers(len(input_modes)))]
    p = q = 0
    if connection == "feedforward":
        p = int(rng.integers(0, n_layers))
        q = int(rng.integers(p, n_layers))
    elif connection == "feedback":
        p = int(rng.integers(1, n_layers + 1))
        q = int(rng.integers(0, p))
    kw = dict(seed=seed, layer_sizes=sizes, T=T, lam=lam, connection=connection, conn_p=p, conn_q=q, input_mode=mode)
    kw.update(overrides)
    return TrialConfig(**kw)


def _draw_inputs(cfg: TrialConfig, rng) -> np.ndarray:
    n0 = cfg.layer_sizes[0]
    if cfg.input_mode == "zero":
        return np.zeros((cfg.T, 1, n0))
    if cfg.input_mode == "constant":
        x = rng.uniform(0.0, 2.0, size=n0)
        return np.broadcast_to(x, (cfg.T, 1, n0)).copy()
    return (rng.random((cfg.T, 1, n0)) < 0.5).astype(np.float64)


def _spike_rate(trace: ForwardTrace) -> float:
    total = count = 0.0
    for l in range(1, trace.num_layers + 1):
        for t in range(1, trace.T + 1):
            s = trace.spikes(l, t)
            total += float(np.sum(s))
            count += s.size
    return total / count if count else 0.0


def build_trial(cfg: TrialConfig) -> Trial:
    """Sample network and input from ``cfg.seed``, resampling until the firing floor holds.

    Zero-input trials are exempt from the floor.  If the floor is still unmet
    after ``MAX_RESAMPLES`` draws the last draw is used and the shortfall is
    visible in ``firing_rate``.
    """
    rng = make_rng((cfg.seed, 1))
    params = NeuronParams(cfg.lam, cfg.v_th)
    resamples = 0
    while True:
        spec = random_network(cfg.layer_sizes, rng, params, cfg.beta, cfg.connection_tuple)
        x = _draw_inputs(cfg, rng)
        label = int(rng.integers(cfg.layer_sizes[-1]))
        rate = _spike_rate(forward_lif(spec, x))
        if rate >= FIRING_FLOOR or cfg.input_mode == "zero" or resamples >= MAX_RESAMPLES:
            return Trial(cfg, spec, x, label, resamples, rate)
        resamples += 1


def _loss_spec(cfg: TrialConfig, kind: str) -> LossSpec:
    return LossSpec(kind, cfg.alpha, cfg.layer_sizes[-1])


def _guard_mask(lif: ForwardTrace, saf: ForwardTrace, l: int, t: int, guard: float) -> np.ndarray:
    v = lif.params.v_th
    return (np.abs(lif.effective_u(l, t) - v) < guard) | (np.abs(saf.effective_u(l, t) - v) < guard)


# ---------------------------------------------------------------- checkers


def check_forward_equivalence(cfg: TrialConfig) -> ComparisonReport:
    """Spikes from both forms must agree exactly wherever the margin guard is not tripped.

    Mismatches after the first trip are tallied as post-trip divergence
    (a flipped spike legitimately changes everything downstream) and do
    not fail the trial.
    """
    trial = build_trial(cfg)
    lif = forward_lif(trial.spec, trial.inputs)
    saf = forward_saf(trial.spec, trial.inputs)
    trips = mismatches = divergence = 0
    first_trip = None
    compared = 0
    for t in range(1, cfg.T + 1):
        for l in range(1, trial.spec.num_layers + 1):
            guard = _guard_mask(lif, saf, l, t, cfg.margin_guard)
            n_trip = int(np.sum(guard))
            if n_trip and first_trip is None:
                first_trip = t
            trips += n_trip
            differ = (lif.spikes(l, t) != saf.spikes(l, t)) & ~guard
            compared += int(np.sum(~guard))
            if first_trip is not None and t >= first_trip:
                divergence += int(np.sum(differ))
            else:
                mismatches += int(np.sum(differ))
    rep = ComparisonReport("forward", cfg, trips=trips, resamples=trial.resamples)
    rep.max_abs["spikes"] = float(mismatches)
    rep.passed = mismatches == 0
    rep.status = "ok" if rep.passed else "mismatch"
    rep.details = {"compared": compared, "post_trip_divergence": divergence, "firing_rate": trial.firing_rate}
    return rep


def _any_trip(lif: ForwardTrace, saf: ForwardTrace, guard: float) -> int:
    n = 0
    for t in range(1, lif.T + 1):
        for l in range(1, lif.num_layers + 1):
            n += int(np.sum(_guard_mask(lif, saf, l, t, guard)))
    return n


def check_per_step_identity(cfg: TrialConfig) -> ComparisonReport:
    """Per-step gradients of the accumulation form and of OTTT must coincide at every ``t``."""
    trial = build_trial(cfg)
    lif = forward_lif(trial.spec, trial.inputs)
    saf = forward_saf(trial.spec, trial.inputs)
    rep = ComparisonReport("per-step", cfg, resamples=trial.resamples)
    rep.trips = _any_trip(lif, saf, cfg.margin_guard)
    if rep.trips:
        rep.status = "excluded"
        return rep
    ls = _loss_spec(cfg, "per-step")
    nonzero = False
    for t in range(1, cfg.T + 1):
        a = grad_saf_e(saf, t, trial.label, trial.spec, ls)
        b = grad_ottt_o(lif, t, trial.label, trial.spec, ls)
        _compare(a, b, rep.max_abs, rep.max_rel)
        nonzero = nonzero or bool(np.any(a.flat() != 0.0))
    rep.passed = rep.worst_rel <= REL_TOL
    rep.status = "ok" if rep.passed else "mismatch"
    rep.details = {"nonzero": nonzero, "firing_rate": trial.firing_rate}
    return rep


def check_final_step_scale(cfg: TrialConfig) -> ComparisonReport:
    """Final-step gradient with clamp factors must equal ``v_th`` times the rate gradient."""
    trial = build_trial(cfg)
    saf = forward_saf(trial.spec, trial.inputs)
    ls = _loss_spec(cfg, "final")
    a = grad_saf_f(saf, trial.label, trial.spec, ls, factors="clamp")
    b = grad_spike_representation(saf, trial.label, trial.spec, ls).scaled(cfg.v_th)
    rep = ComparisonReport("final-step-scale", cfg, resamples=trial.resamples)
    _compare(a, b, rep.max_abs, rep.max_rel)
    rep.passed = rep.worst_rel <= REL_TOL
    rep.status = "ok" if rep.passed else "mismatch"
    rep.details = {"nonzero": bool(np.any(a.flat() != 0.0)), "firing_rate": trial.firing_rate}
    return rep


def implicit_sr_gradient(trace: ForwardTrace, label, spec: NetworkSpec, loss_spec: LossSpec):
    """Rate-model gradient including the feedback loop, by an adjoint dense solve.

    Stacks the rates of layers ``1..N`` into one vector ``z`` whose fixed
    point map has Jacobian ``J`` (clamp derivatives times weights over
    ``v_th``, plus the feedback block).  Solves ``(I - J)^T v = dL/dz`` for a
    single sample and returns ``(GradientSet, condition number)``.  Units
    follow the other engines: weights multiply raw accumulations and biases
    a unit input.
    """
    if trace.batch != 1:
        raise ValueError("the implicit solve handles a single sample")
    T = trace.T
    N = spec.num_layers
    c = spec.connection
    v_th = spec.params.v_th
    sizes = spec.layer_sizes
    offs = np.concatenate([[0], np.cumsum(sizes[1:])]).astype(int)

    def block(l):
        return slice(offs[l - 1], offs[l])

    d = [None] + [f[0] for f in clamp_factors(trace, spec)[1:]]
    n = int(offs[-1])
    J = np.zeros((n, n))
    for l in range(2, N + 1):
        J[block(l), block(l - 1)] += d[l][:, None] * spec.weights[l - 1] / v_th
    if c is not None and c.p >= 1:
        J[block(c.target), block(c.p)] += d[c.target][:, None] * c.weight / v_th
    labels = np.broadcast_to(label, (1,))
    _, top = loss_F(trace.a_hat(N, T), labels, loss_spec, spec.params.lam, T)
    rhs = np.zeros(n)
    rhs[block(N)] = top[0]
    A = np.eye(n) - J
    cond = float(np.linalg.cond(A))
    v = np.linalg.solve(A.T, rhs)
    out = GradientSet.zeros_like(spec, "sr-implicit")
    out.t = T
    for l in range(1, N + 1):
        row = v[block(l)] * d[l] / v_th
        out.dW[l - 1] = np.outer(row, trace.a_hat(l - 1, T)[0])
        out.db[l - 1] = row
    if c is not None:
        src_t = T if c.kind == "feedforward" else T - 1
        row = v[block(c.target)] * d[c.target] / v_th
        out.dconn = np.outer(row, trace.a_hat(c.p, src_t)[0])
    return out, cond


def check_feedback_direction(cfg: TrialConfig) -> ComparisonReport:
    """Sign of the global inner product between the final-step gradient and the implicit rate gradient.

    Uses the shared clamp factors; the surrogate-factor inner product is
    reported alongside in ``details``.  Vacuous (zero) gradients and
    ill-conditioned solves are flagged rather than failed.
    """
    trial = build_trial(cfg)
    saf = forward_saf(trial.spec, trial.inputs)
    ls = _loss_spec(cfg, "final")
    rep = ComparisonReport("feedback-direction", cfg, resamples=trial.resamples)
    sr, cond = implicit_sr_gradient(saf, trial.label, trial.spec, ls)
    a = grad_saf_f(saf, trial.label, trial.spec, ls, factors="clamp")
    a_sg = grad_saf_f(saf, trial.label, trial.spec, ls, factors="surrogate")
    ip = float(np.dot(a.flat(), sr.flat()))
    ip_sg = float(np.dot(a_sg.flat(), sr.flat()))
    _compare(a, sr, rep.max_abs, rep.max_rel)
    rep.details = {"inner": ip, "inner_surrogate": ip_sg, "cond": cond, "firing_rate": trial.firing_rate}
    if not math.isfinite(cond) or cond > COND_LIMIT:
        rep.status = "inconclusive"
    elif not np.any(a.flat() != 0.0) or not np.any(sr.flat() != 0.0):
        rep.status = "vacuous"
    else:
        rep.passed = ip > 0.0
        rep.status = "ok" if rep.passed else "negative"
    return rep


def gradient_similarity(a: GradientSet, b: GradientSet) -> tuple[float, float]:
    """Pearson correlation and mean absolute error of the input-layer weight gradients.

    The correlation is ``nan`` when either side has zero variance.
    """
    x = np.asarray(a.dW[0], dtype=np.float64).ravel()
    y = np.asarray(b.dW[0], dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {a.dW[0].shape} vs {b.dW[0].shape}")
    mae = float(np.mean(np.abs(x - y))) if x.size else float("nan")
    xc = x - x.mean() if x.size else x
    yc = y - y.mean() if y.size else y
    sx = math.sqrt(float(np.dot(xc, xc)))
    sy = math.sqrt(float(np.dot(yc, yc)))
    if sx == 0.0 or sy == 0.0:
        return float("nan"), mae
    return float(np.dot(xc, yc)) / (sx * sy), mae


# ---------------------------------------------------------------- suites


@dataclass
class SuiteResult:
    name: str
    reports: list[ComparisonReport]
    required_rate: float = 1.0

    def counts(self) -> dict:
        out: dict = {}
        for r in self.reports:
            out[r.status] = out.get(r.status, 0) + 1
        return out

    @property
    def considered(self) -> list[ComparisonReport]:
        return [r for r in self.reports if r.status in ("ok", "mismatch", "negative")]

    @property
    def pass_rate(self) -> float:
        rs = self.considered
        return sum(r.passed for r in rs) / len(rs) if rs else float("nan")

    @property
    def trip_rate(self) -> float:
        return sum(r.trips > 0 for r in self.reports) / len(self.reports) if self.reports else 0.0

    @property
    def passed(self) -> bool:
        rs = self.considered
        return bool(rs) and self.pass_rate >= self.required_rate

    def failures(self) -> list[ComparisonReport]:
        return [r for r in self.considered if not r.passed]

    def summary(self) -> str:
        lines = [
            f"{self.name}: {'PASS' if self.passed else 'FAIL'}  trials={len(self.reports)} "
            f"counts={self.counts()} pass_rate={self.pass_rate:.4f} (required {self.required_rate:.2f}) "
            f"trip_rate={self.trip_rate:.4f} worst_rel={max((r.worst_rel for r in self.considered), default=0.0):.3e}"
        ]
        for r in self.failures()[:5]:
            lines.append(f"  replay: {r.config!r}")
        return "\n".join(lines)

    def to_csv(self, fh=None) -> Optional[str]:
        buf = fh if fh is not None else io.StringIO()
        rows = [r.row() for r in self.reports]
        keys = list(dict.fromkeys(k for row in rows for k in row)) or ["tag"]
        w = csv.DictWriter(buf, fieldnames=keys)
        w.writeheader()
        for row in rows:
            w.writerow(row)
        return None if fh is not None else buf.getvalue()


CHECKERS: dict[str, Callable[[TrialConfig], ComparisonReport]] = {
    "forward": check_forward_equivalence,
    "per-step": check_per_step_identity,
    "final-step-scale": check_final_step_scale,
    "feedback-direction": check_feedback_direction,
}

# Short names for the three gradient checks.
check_theorem1 = check_per_step_identity
check_theorem2 = check_final_step_scale
check_theorem3 = check_feedback_direction


def run_suite(name: str, checker: str, configs: list[TrialConfig], workers: int = 1, required_rate: float = 1.0) -> SuiteResult:
    """Run ``checker`` over ``configs``; results are kept in input order."""
    fn = CHECKERS[checker]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            reports = list(ex.map(fn, configs, chunksize=8))
    else:
        reports = [fn(c) for c in configs]
    return SuiteResult(name, reports, required_rate)


def suite_configs(suite: str, n: int, seed: int = 0, **kw) -> list[TrialConfig]:
    """Seeded trial configurations for the named suite."""
    base = seed * 100003
    if suite == "forward":
        return [random_trial_config(base + i, "none", **kw) for i in range(n)]
    if suite.startswith("per-step-"):
        kind = suite[len("per-step-"):]
        return [random_trial_config(base + i, kind, **kw) for i in range(n)]
    if suite == "final-step-scale":
        out = []
        for i in range(n):
            kind = "feedforward" if i % 2 else "none"
            v_th = 2.0 if (i // 2) % 2 else 1.0
            out.append(
                random_trial_config(base + i, kind, max_layers=4, max_width=16, max_T=1, input_modes=("constant",), T=32, v_th=v_th, **kw)
            )
        return out
    if suite == "feedback-direction":
        return [
            random_trial_config(base + i, "feedback", max_layers=4, max_width=16, max_T=1, input_modes=("constant",), T=64, v_th=1.0, **kw)
            for i in range(n)
        ]
    raise ValueError(f"unknown suite {suite!r}")


SUITES = (
    ("forward", "forward", 1.0),
    ("per-step-none", "per-step", 1.0),
    ("per-step-feedforward", "per-step", 1.0),
    ("per-step-feedback", "per-step", 1.0),
    ("final-step-scale", "final-step-scale", 1.0),
    ("feedback-direction", "feedback-direction", 0.95),
)


def run_verify(seed: int = 0, n: int = 200, workers: int = 1, only: Optional[list[str]] = None) -> list[SuiteResult]:
    """All equivalence suites with ``n`` trials each."""
    results = []
    for name, checker, rate in SUITES:
        if only and name not in only:
            continue
        results.append(run_suite(name, checker, suite_configs(name, n, seed), workers, rate))
    return results


def config_as_dict(cfg: TrialConfig) -> dict:
    return asdict(cfg)
