"""Spiking networks trained by forwarding spike accumulations instead of spikes."""

from .config import ConfigError, ExperimentConfig, parse_config
from .gradients import (
    GradientSet,
    grad_ottt_a,
    grad_ottt_o,
    grad_saf_e,
    grad_saf_f,
    grad_spike_representation,
)
from .network import Connection, ForwardTrace, NetworkSpec, forward_lif, forward_saf, random_network
from .neurons import NeuronParams
from .oracle import oracle_unrolled_grad

__all__ = [
    "ConfigError",
    "Connection",
    "ExperimentConfig",
    "ForwardTrace",
    "GradientSet",
    "NetworkSpec",
    "NeuronParams",
    "forward_lif",
    "forward_saf",
    "grad_ottt_a",
    "grad_ottt_o",
    "grad_saf_e",
    "grad_saf_f",
    "grad_spike_representation",
    "oracle_unrolled_grad",
    "parse_config",
    "random_network",
]

__version__ = "0.1.0"
