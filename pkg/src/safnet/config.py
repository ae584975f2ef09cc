"""Experiment configuration: flat ``key = value`` files plus overrides."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Mapping, Optional

from .gradients import ENGINES

__all__ = ["ExperimentConfig", "ConfigError", "PRESETS", "parse_config", "config_keys"]


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    dataset: str = ""
    labels: str = ""
    test_dataset: str = ""
    test_labels: str = ""
    num_classes: int = 0
    n_samples: int = 512
    test_samples: int = 512
    noise: float = 0.1
    hidden: tuple = (32, 32)
    connection: str = "none"
    conn_p: int = 0
    conn_q: int = 0
    engine: str = "saf-e"
    epochs: int = 300
    batch_size: int = 128
    lr: float = 0.1
    momentum: float = 0.9
    alpha: float = 0.05
    T: int = 6
    lam: float = 0.5
    v_th: float = 1.0
    beta: float = 4.0
    encoding: str = "constant"
    normalize: bool = True
    accumulate: bool = False
    freeze_within_sequence: bool = False
    max_iterations: int = 0
    seed: int = 0


# Reference optimizer and neuron settings.
PRESETS: dict[str, dict] = {
    "paper-c": dict(
        batch_size=128, epochs=300, lr=0.1, momentum=0.9, alpha=0.05, T=6, lam=0.5, v_th=1.0, beta=4.0
    ),
}
# Same optimizer and neuron settings cut down to a two-moons desk run.  The
# surrogate slope (at most 1/16 with beta=4) shrinks gradients per layer, so
# the run needs many small steps: small batches over a larger sample.
PRESETS["desk-moons"] = dict(
    PRESETS["paper-c"],
    dataset="two-moons",
    n_samples=2000,
    batch_size=4,
    epochs=50,
    hidden=(32, 32),
    engine="saf-f",
    seed=0,
)

_ALIASES = {"lambda": "lam", "leak": "lam", "time_steps": "T"}


def config_keys() -> list[str]:
    return [f.name for f in fields(ExperimentConfig)]


def _convert(key: str, raw, default):
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            return tuple(int(v) for v in text.replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"cannot parse {key} = {raw!r}") from None
    return text


def _read_file(path) -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def parse_config(
    path=None,
    overrides: Optional[Mapping] = None,
    preset: Optional[str] = "paper-c",
    require_dataset: bool = True,
) -> ExperimentConfig:
    """Resolve a config: preset, then file values, then overrides (highest)."""
    cfg = ExperimentConfig()
    defaults = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    layers: list[Mapping] = []
    if preset:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; available: {', '.join(PRESETS)}")
        layers.append(PRESETS[preset])
    if path is not None:
        layers.append(_read_file(path))
    if overrides:
        layers.append(overrides)
    values = {}
    for layer in layers:
        for key, raw in layer.items():
            name = _ALIASES.get(key, key).replace("-", "_")
            if name not in defaults:
                raise ConfigError(f"unknown config key {key!r}")
            values[name] = _convert(name, raw, defaults[name])
    cfg = dataclasses.replace(cfg, **values)
    if cfg.engine not in ENGINES:
        raise ConfigError(f"unknown engine {cfg.engine!r}; valid engines: {', '.join(ENGINES)}")
    if cfg.connection not in ("none", "feedforward", "feedback"):
        raise ConfigError(f"connection must be none, feedforward or feedback, got {cfg.connection!r}")
    if cfg.encoding not in ("constant", "spike"):
        raise ConfigError(f"encoding must be constant or spike, got {cfg.encoding!r}")
    if cfg.T < 1 or cfg.batch_size < 1 or cfg.epochs < 0:
        raise ConfigError("T and batch_size must be positive, epochs non-negative")
    if require_dataset and not cfg.dataset:
        raise ConfigError("no dataset given (set dataset = two-moons or a file path)")
    return cfg
