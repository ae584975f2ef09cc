"""Dense float64 arithmetic with a fixed summation order.

Every reduction here accumulates its terms strictly left to right, so two
callers feeding the same operands in the same order get bitwise-identical
results.  Vectors may carry a leading batch axis; the reduction order along
the summed axis is unaffected by batching.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "as_vector",
    "as_matrix",
    "matvec",
    "rmatvec",
    "outer",
    "outer_sum",
    "geometric_weight_sum",
    "make_rng",
]


def as_vector(v) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    return arr


def as_matrix(m) -> np.ndarray:
    arr = np.asarray(m, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {arr.shape}")
    return arr


def matvec(m: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Return ``m @ v`` summed over columns in ascending order.

    ``v`` may be a single vector of length ``m.shape[1]`` or a batch with
    shape ``(B, m.shape[1])``.
    """
    m = as_matrix(m)
    v = as_vector(v)
    if v.shape[-1] != m.shape[1]:
        raise ValueError(f"matvec: matrix has {m.shape[1]} columns, vector has {v.shape[-1]}")
    out = np.zeros(v.shape[:-1] + (m.shape[0],), dtype=np.float64)
    for j in range(m.shape[1]):
        out += v[..., j : j + 1] * m[:, j]
    return out


def rmatvec(m: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Return ``m.T @ v`` summed over rows in ascending order."""
    m = as_matrix(m)
    v = as_vector(v)
    if v.shape[-1] != m.shape[0]:
        raise ValueError(f"rmatvec: matrix has {m.shape[0]} rows, vector has {v.shape[-1]}")
    out = np.zeros(v.shape[:-1] + (m.shape[1],), dtype=np.float64)
    for i in range(m.shape[0]):
        out += v[..., i : i + 1] * m[i]
    return out


def outer(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    u = as_vector(u)
    v = as_vector(v)
    if u.ndim != 1 or v.ndim != 1:
        raise ValueError("outer expects two 1-D vectors")
    return u[:, None] * v[None, :]


def outer_sum(us: np.ndarray, vs: np.ndarray) -> np.ndarray:
    """Sum of ``outer(us[b], vs[b])`` over the batch, ascending in ``b``."""
    us = np.atleast_2d(as_vector(us))
    vs = np.atleast_2d(as_vector(vs))
    if us.shape[0] != vs.shape[0]:
        raise ValueError(f"outer_sum: batch sizes differ ({us.shape[0]} vs {vs.shape[0]})")
    out = np.zeros((us.shape[1], vs.shape[1]), dtype=np.float64)
    for b in range(us.shape[0]):
        out += us[b][:, None] * vs[b][None, :]
    return out


def geometric_weight_sum(lam: float, t: int) -> float:
    """Sum of ``lam**(t - tau)`` for ``tau = 0..t``, by direct summation."""
    if t < 0:
        raise ValueError("t must be non-negative")
    total = 0.0
    for tau in range(t + 1):
        total += lam ** (t - tau)
    return total


def make_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)
