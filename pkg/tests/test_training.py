import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from opl.datagen import Dataset
from opl.losses import CrossEntropyLoss, L2Loss
from opl.netcore import backward, forward, objective
from opl.training import (
    ConvergenceTrace,
    TrainConfig,
    accuracy,
    eta_sweep,
    gd_step,
    gradient_dominance_check,
    sgd_step,
    train,
)

from conftest import small_data, small_net


def _weights(p):
    return [W.copy() for W in p.W]


def test_zero_eta_leaves_weights():
    p, d = small_net(m=16), small_data(4)
    before = _weights(p)
    gd_step(p, d, None, 0.0)
    assert all(np.array_equal(a, b) for a, b in zip(before, p.W))


def test_gd_step_matches_hand_update():
    p, d = small_net(m=16), small_data(4)
    obj = objective(p, d)
    G = backward(p, obj.trace, obj.loss_vectors).all_layers()
    expect = [W - 0.01 * g for W, g in zip(p.W, G)]
    _, rec = gd_step(p, d, None, 0.01)
    assert rec.F == obj.value
    assert all(np.allclose(a, b, rtol=0, atol=1e-15) for a, b in zip(p.W, expect))


def test_full_batch_sgd_is_gd_bitwise():
    p, d = small_net(m=16, L=3), small_data(5)
    q = p.copy()
    for _ in range(3):
        gd_step(p, d, None, 0.02)
        sgd_step(q, d, None, 0.02, range(d.n))
    assert all(np.array_equal(a, b) for a, b in zip(p.W, q.W))


def test_single_sample_average_is_full_gradient():
    p, d = small_net(m=12, L=2), small_data(4)
    obj = objective(p, d)
    full = backward(p, obj.trace, obj.loss_vectors).all_layers()
    avg = [np.zeros_like(W) for W in p.W]
    for i in range(d.n):
        q = p.copy()
        sgd_step(q, d, None, 1.0, [i])
        for a, W0, W1 in zip(avg, p.W, q.W):
            a += (W0 - W1) / d.n  # each step moved by n * grad_i
    assert all(np.allclose(a, g, atol=1e-12) for a, g in zip(avg, full))


def test_sgd_scale_is_n_over_b():
    p, d = small_net(m=12, L=2), small_data(4)
    q = p.copy()
    sgd_step(q, d, None, 0.01, [1, 2])
    obj = objective(p, d)
    V = np.zeros_like(obj.loss_vectors)
    V[[1, 2]] = obj.loss_vectors[[1, 2]]
    G = backward(p, obj.trace, V).all_layers()
    assert all(np.allclose(W - 0.01 * 2 * g, W1, atol=1e-15) for W, g, W1 in zip(p.W, G, q.W))


def test_empty_batch_rejected():
    with pytest.raises(ValueError):
        sgd_step(small_net(), small_data(3), None, 0.1, [])


def test_eps_above_initial_loss_means_no_steps():
    p, d = small_net(m=16), small_data(4)
    tr = train(p, d, None, TrainConfig(eta=0.01, T=50, eps=1e6))
    assert tr.iterations == 0 and tr.status == "converged" and len(tr.F) == 1


def test_train_does_not_touch_input_params():
    p, d = small_net(m=16), small_data(4)
    before = _weights(p)
    tr = train(p, d, None, TrainConfig(eta=0.01, T=5))
    assert all(np.array_equal(a, b) for a, b in zip(before, p.W))
    assert tr.params is not p and tr.iterations == 5


def test_trace_loss_matches_objective():
    p, d = small_net(m=32), small_data(4)
    tr = train(p, d, L2Loss(), TrainConfig(eta=0.005, T=3))
    assert tr.F[0] == pytest.approx(objective(p, d).value, rel=0, abs=0)
    assert tr.final_F == pytest.approx(objective(tr.params, d).value, rel=1e-12)


def test_eta_sweep_single_point():
    p, d = small_net(m=32), small_data(4)
    assert eta_sweep(p, d, None, [1e-3], pilot=5).eta == 1e-3


def test_eta_sweep_falls_back_to_next_smaller():
    p, d = small_net(m=32), small_data(4)
    res = eta_sweep(p, d, None, [1e-3, 50.0], pilot=10)
    assert res.eta == 1e-3 and res.tried[0][0] == 50.0 and not res.tried[0][1]


def test_eta_sweep_all_fail():
    p, d = small_net(m=32), small_data(4)
    with pytest.raises(RuntimeError):
        eta_sweep(p, d, None, [50.0, 100.0], pilot=10)


def test_accuracy_values():
    p = small_net(m=16, d=2)
    d = small_data(4, output_dim=2, label_mode="classification")
    pred = np.argmax(forward(p, d.X).y, axis=1)
    right = Dataset(d.X, pred.astype(np.int64), label_mode="classification")
    assert accuracy(p, right) == 1.0
    wrong = pred.copy()
    wrong[0] = 1 - wrong[0]
    assert accuracy(p, Dataset(d.X, wrong.astype(np.int64), label_mode="classification")) == 0.75


def test_accuracy_needs_classification():
    with pytest.raises(ValueError):
        accuracy(small_net(), small_data(3))


def test_cross_entropy_stops_at_full_accuracy():
    p = small_net(m=64, L=2, d=3)
    d = small_data(6, output_dim=3, label_mode="classification")
    tr = train(p, d, CrossEntropyLoss(), TrainConfig(eta=0.05, T=2000, eps=1e-8))
    assert tr.status in ("accuracy", "converged") and tr.accuracy[-1] == 1.0


def test_dominance_skips_zero_loss():
    tr = ConvergenceTrace(F=[1.0, 1e-20], grad_norms=[[1.0, 2.0], [0.0, 0.0]])
    rep = gradient_dominance_check(tr)
    assert rep.skipped == 1 and rep.floor == 4.0 and rep.passed


def test_trace_csv_header(tmp_path):
    tr = train(small_net(m=16), small_data(3), None, TrainConfig(eta=0.01, T=2))
    lines = tr.to_csv(tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "t,F,grad_fro_max,travel_fro_max,travel_spec_max,accuracy" and len(lines) == 4


@given(eta=st.floats(-1.0, 0.0, exclude_max=True) | st.just(math.nan))
def test_bad_eta_rejected(eta):
    with pytest.raises(ValueError):
        TrainConfig(eta=eta)
