import numpy as np

from safnet.network import Connection, NetworkSpec
from safnet.neurons import NeuronParams


def chain_spec(lam=0.5, v_th=1.0):
    """1-1-1 chain with unit weights and zero biases."""
    return NetworkSpec(
        [1, 1, 1],
        NeuronParams(lam, v_th),
        4.0,
        [np.ones((1, 1)), np.ones((1, 1))],
        [np.zeros(1), np.zeros(1)],
    )


def with_zero_connection(spec, kind, p, q):
    out = spec.copy()
    rows, cols = spec.layer_sizes[q + 1], spec.layer_sizes[p]
    out.connection = Connection(kind, p, q, np.zeros((rows, cols)))
    out.validate()
    return out


ACCEPTANCE_LINES: list[str] = []


def report(number: int, ok: bool, text: str) -> None:
    line = f"[criterion {number:2d}] {'PASS' if ok else 'FAIL'}  {text}"
    ACCEPTANCE_LINES.append(line)
    print(line)
