"""Command-line entry point: train, infer, verify, compare-grads, bench."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import statistics
import sys
import time
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, parse_config
from .data import encode_inputs
from .equivalence import SUITES, gradient_similarity, run_verify
from .gradients import ENGINES, grad_ottt_a, grad_ottt_o, grad_saf_e, grad_saf_f
from .losses import LossSpec
from .mathops import make_rng
from .network import NetworkSpec, count_state_buffers, forward_lif, forward_saf, random_network
from .neurons import NeuronParams
from .training import TrainingDiverged, build_network, infer_lif, load_datasets, train, write_metrics_csv

__all__ = ["cli_main", "main", "engine_gradient", "bench_state_buffers"]


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--preset", default="paper-c", help="base preset (default paper-c); 'none' for bare defaults")
    for f in dataclasses.fields(ExperimentConfig):
        flag = "--" + f.name.replace("_", "-")
        if isinstance(f.default, bool):
            p.add_argument(flag, dest=f.name, nargs="?", const="true", default=None)
        else:
            p.add_argument(flag, dest=f.name, default=None)


def _config_from(args, require_dataset=True) -> ExperimentConfig:
    overrides = {}
    for f in dataclasses.fields(ExperimentConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            overrides[f.name] = v
    preset = None if args.preset in ("none", "") else args.preset
    return parse_config(args.config, overrides, preset, require_dataset)


def _print_metrics(rows) -> None:
    for row in rows:
        print(", ".join(f"{k}={v:.4f}" if isinstance(v, float) else f"{k}={v}" for k, v in row.items()))


def _cmd_train(args) -> int:
    cfg = _config_from(args)
    try:
        spec, metrics = train(cfg)
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        if args.checkpoint:
            exc.checkpoint.save(args.checkpoint)
            print(f"last good checkpoint written to {args.checkpoint}", file=sys.stderr)
        return 3
    if args.metrics:
        write_metrics_csv(metrics, args.metrics)
    if args.checkpoint:
        spec.save(args.checkpoint)
    _print_metrics(metrics.rows[-2:] if metrics.rows else [])
    secs = metrics.seconds_per_iteration
    if secs:
        print(f"iterations={metrics.iterations} median_seconds_per_iteration={statistics.median(secs):.6f}")
    return 0


def _cmd_infer(args) -> int:
    cfg = _config_from(args)
    spec = NetworkSpec.load(args.checkpoint)
    train_ds, test_ds = load_datasets(cfg)
    ds = test_ds if (args.split == "test" and test_ds is not None) else train_ds
    rep = infer_lif(spec, ds, cfg.T, cfg.encoding, cfg.seed)
    print(f"accuracy_lif={rep.accuracy_lif:.6f} accuracy_saf={rep.accuracy_saf:.6f} delta={rep.accuracy_delta:.6f}")
    print(f"rates_lif={[round(r, 6) for r in rep.rates_lif]} rates_saf={[round(r, 6) for r in rep.rates_saf]}")
    print(f"total_rate_delta={rep.total_rate_delta:.6f} prediction_agreement={rep.agreement:.6f}")
    return 0


def _cmd_verify(args) -> int:
    results = run_verify(args.seed, args.trials, args.workers, args.suite)
    ok = True
    for r in results:
        print(r.summary())
        ok = ok and r.passed
        if args.csv_dir:
            out = Path(args.csv_dir)
            out.mkdir(parents=True, exist_ok=True)
            with open(out / f"{r.name}.csv", "w", newline="") as fh:
                r.to_csv(fh)
    print("verify:", "PASS" if ok else "FAIL")
    return 0 if ok else 1


def engine_gradient(engine: str, spec: NetworkSpec, x: np.ndarray, y: np.ndarray, cfg: ExperimentConfig, t=None):
    """Gradient of ``engine`` on one batch; per-step engines report step ``t`` (default ``T``)."""
    C = spec.layer_sizes[-1]
    T = x.shape[0]
    t = T if t is None else t
    if engine == "saf-e":
        return grad_saf_e(forward_saf(spec, x), t, y, spec, LossSpec("per-step", cfg.alpha, C))
    if engine == "ottt-o":
        return grad_ottt_o(forward_lif(spec, x), t, y, spec, LossSpec("per-step", cfg.alpha, C))
    if engine == "ottt-a":
        return grad_ottt_a(forward_lif(spec, x), y, spec, LossSpec("per-step", cfg.alpha, C))
    if engine == "saf-f":
        return grad_saf_f(forward_saf(spec, x), y, spec, LossSpec("final", cfg.alpha, C))
    raise ValueError(f"unknown engine {engine!r}; valid engines: {', '.join(ENGINES)}")


def _cmd_compare(args) -> int:
    cfg = _config_from(args)
    train_ds, _ = load_datasets(cfg)
    spec = NetworkSpec.load(args.checkpoint) if args.checkpoint else build_network(cfg, train_ds.feature_dim, train_ds.num_classes)
    n = min(cfg.batch_size, len(train_ds))
    x = encode_inputs(train_ds.features[:n], cfg.T, cfg.encoding, make_rng(cfg.seed))
    y = train_ds.labels[:n]
    a = engine_gradient(args.engines[0], spec, x, y, cfg, args.t)
    b = engine_gradient(args.engines[1], spec, x, y, cfg, args.t)
    corr, mae = gradient_similarity(a, b)
    corr_txt = "undefined" if np.isnan(corr) else f"{corr:.6f}"
    print(f"{args.engines[0]} vs {args.engines[1]}: corr={corr_txt} mae={mae:.6e}")
    return 0


def bench_state_buffers(spec: NetworkSpec, Ts) -> tuple[dict, dict, bool]:
    """Buffer counts for streaming SAF and traced LIF; ``ok`` iff SAF is flat and LIF linear."""
    saf = {T: count_state_buffers(spec, "saf", T).total for T in Ts}
    lif = {T: count_state_buffers(spec, "lif-trace", T).total for T in Ts}
    flat = len(set(saf.values())) == 1
    Ts = sorted(Ts)
    slopes = {(lif[b] - lif[a]) / (b - a) for a, b in zip(Ts, Ts[1:])}
    linear = len(slopes) == 1 and next(iter(slopes)) > 0 if len(Ts) > 1 else True
    return saf, lif, flat and linear


def _time_iteration(engine: str, spec: NetworkSpec, x, y, cfg, reps: int) -> float:
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        if engine == "saf-e":
            tr = forward_saf(spec, x)
            for t in range(1, x.shape[0] + 1):
                grad_saf_e(tr, t, y, spec, LossSpec("per-step", cfg.alpha, spec.layer_sizes[-1]))
        else:
            engine_gradient(engine, spec, x, y, cfg)
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def _cmd_bench(args) -> int:
    cfg = _config_from(args, require_dataset=False)
    sizes = [2, *cfg.hidden, 2]
    spec = random_network(sizes, make_rng(cfg.seed), NeuronParams(cfg.lam, cfg.v_th), cfg.beta)
    Ts = list(args.horizons)
    rng = make_rng(cfg.seed + 1)
    feats = rng.normal(size=(args.batch, 2))
    y = rng.integers(0, 2, size=args.batch)
    print("T, saf_buffers, ottt_trace_buffers, saf_e_seconds, ottt_a_seconds")
    saf, lif, ok = bench_state_buffers(spec, Ts)
    for T in Ts:
        x = encode_inputs(feats, T)
        ts = _time_iteration("saf-e", spec, x, y, cfg, args.reps)
        to = _time_iteration("ottt-a", spec, x, y, cfg, args.reps)
        print(f"{T}, {saf[T]}, {lif[T]}, {ts:.6f}, {to:.6f}")
    print("state buffers:", "SAF flat and traced LIF linear in T" if ok else "shape check FAILED")
    return 0 if ok else 1


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="safnet", description="Spiking network training with spike accumulation forwarding.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command")

    t = sub.add_parser("train", help="train a network")
    _add_config_flags(t)
    t.add_argument("--metrics", help="CSV path for per-epoch metrics")
    t.add_argument("--checkpoint", help="where to save the trained network")

    i = sub.add_parser("infer", help="evaluate a checkpoint with LIF neurons and the accumulation form")
    _add_config_flags(i)
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--split", choices=("train", "test"), default="test")

    v = sub.add_parser("verify", help="run the randomized equivalence suites")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--trials", type=int, default=200)
    v.add_argument("--workers", type=int, default=1)
    v.add_argument("--suite", action="append", choices=[s[0] for s in SUITES])
    v.add_argument("--csv-dir")

    c = sub.add_parser("compare-grads", help="correlation and MAE of input-layer gradients of two engines")
    _add_config_flags(c)
    c.add_argument("--engines", nargs=2, choices=ENGINES, default=("saf-f", "ottt-a"))
    c.add_argument("--checkpoint")
    c.add_argument("--t", type=int, help="step for per-step engines (default T)")

    b = sub.add_parser("bench", help="wall time and state-buffer counts across T")
    _add_config_flags(b)
    b.add_argument("--horizons", nargs="+", type=int, default=[4, 8, 16, 32], help="sequence lengths to measure")
    b.add_argument("--reps", type=int, default=20)
    b.add_argument("--batch", type=int, default=32)
    return p


_COMMANDS = {
    "train": _cmd_train,
    "infer": _cmd_infer,
    "verify": _cmd_verify,
    "compare-grads": _cmd_compare,
    "bench": _cmd_bench,
}


def cli_main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) if exc.code in (0, None) else 2
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli_main())
