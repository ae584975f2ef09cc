import math

import numpy as np
import pytest

from safnet.equivalence import (
    TrialConfig,
    build_trial,
    check_forward_equivalence,
    check_feedback_direction,
    check_per_step_identity,
    check_theorem1,
    gradient_similarity,
    implicit_sr_gradient,
    random_trial_config,
    relative_diff,
    run_suite,
    suite_configs,
)
from safnet.gradients import GradientSet, grad_saf_f
from safnet.losses import LossSpec
from safnet.network import Connection, forward_saf


def gs(w):
    return GradientSet([np.asarray(w, dtype=float)], [np.zeros(1)])


def test_relative_diff():
    assert relative_diff(np.zeros(3), np.zeros(3)) == 0.0
    assert relative_diff(np.array([1.0, 2.0]), np.array([1.0, 3.0])) == 1.0 / 3.0


def test_similarity_identical_and_opposite():
    a = gs([[1.0, 2.0], [0.5, -1.0]])
    corr, mae = gradient_similarity(a, a)
    assert abs(corr - 1.0) < 1e-15 and mae == 0.0
    corr, _ = gradient_similarity(a, a.scaled(-1.0))
    assert abs(corr + 1.0) < 1e-15


def test_similarity_zero_variance_is_undefined():
    corr, mae = gradient_similarity(gs([[1.0, 1.0]]), gs([[0.0, 2.0]]))
    assert math.isnan(corr) and mae == 1.0
    with pytest.raises(ValueError):
        gradient_similarity(gs([[1.0, 1.0]]), gs([[1.0, 1.0, 1.0]]))


def test_trial_is_deterministic():
    cfg = random_trial_config(17, "feedback")
    a, b = build_trial(cfg), build_trial(cfg)
    assert a.inputs.tobytes() == b.inputs.tobytes() and a.label == b.label
    assert all(p.tobytes() == q.tobytes() for p, q in zip(a.spec.parameters(), b.spec.parameters()))
    assert check_per_step_identity(cfg).row() == check_theorem1(cfg).row()


def test_firing_floor_met():
    for seed in range(10):
        assert build_trial(random_trial_config(seed)).firing_rate >= 0.02


def test_zero_input_trial_passes_without_trips():
    cfg = TrialConfig(seed=1, layer_sizes=(3, 4, 2), T=6, input_mode="zero")
    rep = check_forward_equivalence(cfg)
    assert rep.passed and rep.trips == 0


def test_forward_small_suite():
    for lam in (0.5, 1.0):
        confs = [TrialConfig(seed=s, layer_sizes=(4, 6, 5, 3), T=16, lam=lam) for s in range(20)]
        res = run_suite("f", "forward", confs)
        assert res.passed and res.pass_rate == 1.0


@pytest.mark.parametrize("kind", ["none", "feedforward", "feedback"])
def test_per_step_small_suite(kind):
    res = run_suite("t1", "per-step", suite_configs(f"per-step-{kind}", 15, seed=1, max_width=12, max_T=8))
    assert res.passed, res.summary()


def test_final_step_scale_small_suite():
    res = run_suite("t2", "final-step-scale", suite_configs("final-step-scale", 12, seed=1))
    assert res.passed, res.summary()
    assert {r.config.v_th for r in res.reports} == {1.0, 2.0}


def test_zero_feedback_weight_reduces_implicit_gradient():
    cfg = random_trial_config(4, "feedback", max_layers=3, max_width=8, max_T=1, input_modes=("constant",), T=64)
    trial = build_trial(cfg)
    c = trial.spec.connection
    trial.spec.connection = Connection(c.kind, c.p, c.q, np.zeros_like(c.weight))
    tr = forward_saf(trial.spec, trial.inputs)
    ls = LossSpec("final", 0.05, cfg.layer_sizes[-1])
    sr, cond = implicit_sr_gradient(tr, trial.label, trial.spec, ls)
    f = grad_saf_f(tr, trial.label, trial.spec, ls, factors="clamp")
    assert cond < 1e12
    assert np.allclose(sr.flat(), f.flat(), rtol=1e-12, atol=1e-18)
    if np.any(f.flat()):
        assert np.dot(sr.flat(), f.flat()) > 0


def test_feedback_direction_small_suite():
    res = run_suite("t3", "feedback-direction", suite_configs("feedback-direction", 20, seed=2), required_rate=0.95)
    assert res.passed, res.summary()
    for r in res.reports:
        assert r.status in ("ok", "negative", "vacuous", "inconclusive")
        if r.status == "vacuous":
            assert r.passed


def test_report_csv_and_replay_line():
    res = run_suite("f", "forward", [TrialConfig(seed=0, layer_sizes=(2, 3, 2), T=4)])
    text = res.to_csv()
    assert text.splitlines()[0].startswith("tag,seed,status,passed")
    res.reports[0].passed = False
    res.reports[0].status = "mismatch"
    assert "replay: TrialConfig(seed=0" in res.summary()
    assert not res.passed


def test_trial_config_validation():
    with pytest.raises(ValueError):
        TrialConfig(seed=0, layer_sizes=(2, 2), T=3, input_mode="noise")
    with pytest.raises(ValueError):
        TrialConfig(seed=0, layer_sizes=(2, 2), T=0)
