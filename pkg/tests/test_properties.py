"""Randomized invariants, driven by hypothesis."""

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from safnet.gradients import grad_ottt_a, grad_ottt_o, grad_saf_e
from safnet.losses import LossSpec, SurrogateParams, loss_E, loss_F, sg
from safnet.mathops import geometric_weight_sum, make_rng, matvec
from safnet.network import forward_lif, forward_saf, random_network
from safnet.neurons import NeuronParams, SafState, lif_to_saf, saf_step, saf_to_lif

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)
lams = st.sampled_from([0.5, 1.0, 0.8, 0.25])
conns = st.sampled_from([None, ("feedforward", 0, 0), ("feedforward", 0, 1), ("feedback", 2, 0), ("feedback", 2, 1)])


@given(arrays(np.float64, (4, 3), elements=finite), arrays(np.float64, 3, elements=finite))
def test_matvec_matches_explicit_sum(m, v):
    out = matvec(m, v)
    for i in range(4):
        acc = 0.0
        for j in range(3):
            acc += m[i, j] * v[j]
        assert out[i] == acc


@given(lams, st.integers(0, 40))
def test_geometric_sum_bounds(lam, t):
    s = geometric_weight_sum(lam, t)
    assert 1.0 <= s <= t + 1
    assert abs(s - (t + 1 if lam == 1.0 else (1 - lam ** (t + 1)) / (1 - lam))) < 1e-12


@given(st.integers(0, 10_000), lams, st.integers(1, 20))
@settings(max_examples=40, deadline=None)
def test_accumulation_increments_are_binary(seed, lam, T):
    rng = make_rng(seed)
    p = NeuronParams(lam, 1.0)
    state = SafState.zeros(5)
    hist = []
    for _ in range(T):
        prev = state.a_hat
        state, s = saf_step(state, rng.uniform(-0.5, 1.5, 5), np.zeros(5), p)
        hist.append(s)
        d = state.a_hat - lam * prev
        assert np.allclose(d, np.rint(d), atol=1e-9) and set(np.rint(d)) <= {0.0, 1.0}
        if lam == 1.0:
            assert np.all(state.a_hat >= prev)
    back = lif_to_saf(hist, saf_to_lif(state, p)[0], p)
    assert np.allclose(back.a_hat, state.a_hat, rtol=0, atol=1e-12)


@given(st.integers(0, 10_000), lams, conns, st.integers(1, 24))
@settings(max_examples=40, deadline=None)
def test_forward_forms_agree(seed, lam, conn, T):
    rng = make_rng(seed)
    spec = random_network([3, 5, 4], rng, NeuronParams(lam, 1.0), 4.0, conn)
    x = rng.uniform(0, 2, size=(T, 2, 3))
    lif, saf = forward_lif(spec, x), forward_saf(spec, x)
    for l in (1, 2):
        for t in range(1, T + 1):
            guard = np.abs(lif.effective_u(l, t) - 1.0) < 1e-9
            if guard.any():
                return
            assert np.array_equal(lif.spikes(l, t), saf.spikes(l, t))


@given(st.integers(0, 10_000), lams, conns, st.integers(1, 10))
@settings(max_examples=30, deadline=None)
def test_per_step_gradients_agree(seed, lam, conn, T):
    rng = make_rng(seed)
    spec = random_network([3, 5, 2], rng, NeuronParams(lam, 1.0), 4.0, conn)
    x = rng.uniform(0, 2, size=(T, 3, 3))
    y = rng.integers(0, 2, size=3)
    lif, saf = forward_lif(spec, x), forward_saf(spec, x)
    ls = LossSpec("per-step", 0.05, 2)
    total = None
    for t in range(1, T + 1):
        a, b = grad_saf_e(saf, t, y, spec, ls), grad_ottt_o(lif, t, y, spec, ls)
        assert np.allclose(a.flat(), b.flat(), rtol=1e-10, atol=1e-15)
        total = b.flat() if total is None else total + b.flat()
    assert np.array_equal(total, grad_ottt_a(lif, y, spec, ls).flat())


@given(arrays(np.float64, 6, elements=st.floats(-50, 50)), st.floats(0.5, 8), st.floats(0.1, 3))
def test_sg_positive_bounded_even(u, beta, v):
    p = SurrogateParams(beta, v)
    out = sg(u, p)
    assert np.all(out >= 0) and np.all(out <= 1 / (4 * beta) + 1e-18)
    assert np.allclose(out, sg(2 * v - u, p), rtol=1e-9, atol=1e-300)


def central_diff(f, z, h=1e-5):
    g = np.zeros_like(z)
    for i in range(z.size):
        e = np.zeros_like(z)
        e[i] = h
        g[i] = (f(z + e) - f(z - e)) / (2 * h)
    return g


@given(arrays(np.float64, 4, elements=st.floats(-3, 3)), st.integers(0, 3), st.floats(0, 1), st.integers(1, 12), lams)
@settings(deadline=None)
def test_loss_gradients_match_finite_differences(z, y, alpha, T, lam):
    ls = LossSpec("per-step", alpha, 4)
    _, g = loss_E(z, y, ls, T)
    fd = central_diff(lambda v: float(loss_E(v, y, ls, T)[0]), z)
    assert np.allclose(g, fd, rtol=1e-6, atol=1e-8)
    a_hat = np.abs(z) * 2
    _, gf = loss_F(a_hat, y, ls, lam, T)
    fdf = central_diff(lambda v: float(loss_F(v, y, ls, lam, T)[0]), a_hat)
    assert np.allclose(gf, fdf, rtol=1e-6, atol=1e-8)
