import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from opl.datagen import Dataset, generate_separated_dataset
from opl.losses import CrossEntropyLoss, L2Loss
from opl.netcore import (
    ArchSpec,
    NetworkParams,
    Role,
    back_matrix,
    backward,
    finite_difference_check,
    forward,
    full_gradient,
    init_network,
    keyed_normal,
    objective,
    relu,
)

from conftest import small_data, small_net

LAST = 1 / math.sqrt(2)


def test_relu_cases():
    assert relu(np.array([3.0])).tolist() == [3.0]
    assert relu(np.array([-2.0, 0.0, 1.5])).tolist() == [0.0, 0.0, 1.5]


def test_init_variance_matches_two_over_m():
    p = init_network(ArchSpec(10, 1000, 1, 3), 7)
    v = p.W[0].var()
    assert 1.8e-3 <= v <= 2.2e-3


def test_init_mean_small_width_within_band():
    p = init_network(ArchSpec(10, 4, 1, 3), 3)
    for W in p.W:
        se = math.sqrt(2 / 4) / math.sqrt(W.size)
        assert abs(W.mean()) <= 3 * se


def test_init_deterministic():
    a = init_network(ArchSpec(10, 32, 2, 3), 5)
    b = init_network(ArchSpec(10, 32, 2, 3), 5)
    for x, y in zip([a.A, *a.W, a.B], [b.A, *b.W, b.B]):
        assert np.array_equal(x, y)


def test_keyed_rows_independent_of_shape():
    # a row depends only on (seed, role, layer, row) and the column count
    big = keyed_normal(1, Role.W, 2, (10, 6), 1.0)
    small = keyed_normal(1, Role.W, 2, (4, 6), 1.0)
    assert np.array_equal(big[:4], small)


def test_zero_network_output_and_signs():
    p = small_net(m=5, L=2)
    z = NetworkParams(np.zeros_like(p.A), [np.zeros_like(W) for W in p.W], np.zeros_like(p.B), p.arch, 0)
    x = small_data(1).X[0]
    t = forward(z, x)
    assert np.all(t.y == 0)
    assert all(D.all() for D in t.D)


def test_hand_forward_m3():
    A = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 1.0]])
    W = np.array([[1.0, -1.0, 0.5], [0.0, 2.0, 0.0], [1.0, 1.0, 1.0]])
    B = np.array([[1.0, -2.0, 0.5]])
    arch = ArchSpec(2, 3, 1, 1)
    p = NetworkParams(A, [W], B, arch, 0)
    x = np.array([LAST, LAST])
    # h0 = relu(Ax) = (c, c, 0) with c = 1/sqrt(2); g1 = (0, 2c, 2c); y = -4c + c
    c = LAST
    y = forward(p, x).y[0, 0]
    assert y == pytest.approx(-4 * c + c, abs=1e-15)


def test_back_matrix_identity_case():
    p, d = small_net(m=6, L=2, d=3), small_data(2)
    t = forward(p, d.X)
    assert np.array_equal(back_matrix(p, t, p.L + 1), p.B)


def test_back_matrix_2x2_hand():
    A = np.eye(2)
    W = np.array([[1.0, -1.0], [2.0, 1.0]])
    B = np.array([[3.0, 5.0]])
    p = NetworkParams(A, [W], B, ArchSpec(2, 2, 1, 1), 0)
    x = np.array([LAST, LAST * 0.5])
    t = forward(p, x[None] / np.linalg.norm(x) * 1.0)
    # g1 = W h0 with h0 > 0: first entry h0[0]-h0[1] > 0, second > 0, so D1 = I
    expected = B @ np.diag(t.D[1][0].astype(float)) @ W
    assert np.allclose(back_matrix(p, t, 1), expected)
    assert t.D[1][0].all()
    assert np.allclose(back_matrix(p, t, 1), [[3 + 10, -3 + 5]])


def test_backward_zero_vectors_give_zero():
    p, d = small_net(m=8, L=2), small_data(3)
    g = backward(p, forward(p, d.X), np.zeros((3, 1)))
    assert all(np.all(g.layer(l) == 0) for l in range(p.L))


def test_gradient_matches_finite_differences():
    p = small_net(m=8, L=2)
    d = small_data(1)
    assert finite_difference_check(p, d) <= 1e-6


def test_backward_equals_sum_of_per_sample_back_matrix_formula(net_and_data):
    p, d = net_and_data
    obj, g = full_gradient(p, d)
    for l in range(1, p.L + 1):
        manual = np.zeros_like(p.W[l - 1])
        for i in range(d.n):
            t = obj.trace.sample(i)
            Bk = back_matrix(p, t, l + 1)
            u = (obj.loss_vectors[i] @ Bk) * t.D[l][0]
            manual += np.outer(u, t.h[l - 1][0])
        assert np.allclose(g.layer(l - 1), manual, atol=1e-13)


@given(seed=st.integers(0, 2**16), m=st.integers(2, 16), L=st.integers(1, 3))
def test_directional_derivative_property(seed, m, L):
    p = init_network(ArchSpec(5, m, 1, L), seed)
    d = generate_separated_dataset(3, 5, 0.1, seed=seed)
    obj, g = full_gradient(p, d)
    rng = np.random.default_rng(seed)
    dirs = [rng.standard_normal(W.shape) for W in p.W]
    lin = sum(float(np.sum(g.layer(l) * dirs[l])) for l in range(L))
    h = 1e-6
    up = objective(p.with_W([W + h * D for W, D in zip(p.W, dirs)]), d).value
    dn = objective(p.with_W([W - h * D for W, D in zip(p.W, dirs)]), d).value
    tp = forward(p.with_W([W + h * D for W, D in zip(p.W, dirs)]), d.X)
    tm = forward(p.with_W([W - h * D for W, D in zip(p.W, dirs)]), d.X)
    if any(not np.array_equal(a, b) for a, b in zip(tp.D, tm.D)):
        return  # crossed a kink
    assert abs(lin - (up - dn) / (2 * h)) / (abs(lin) + 1e-12) <= 1e-5


def test_perfect_fit_gives_zero_objective():
    p, d = small_net(m=8, L=2), small_data(4)
    d2 = d.with_labels(forward(p, d.X).y)
    assert objective(p, d2).value == 0.0


def test_l2_hand_value():
    assert L2Loss().evaluate(np.array([2.0]), np.array([0.0])) == 2.0


@pytest.mark.parametrize("k", [2, 3, 7])
def test_cross_entropy_uniform_logits(k):
    assert CrossEntropyLoss().evaluate(np.zeros(k), 1) == pytest.approx(math.log(k), abs=1e-15)


def test_relu_homogeneity_in_A():
    p, d = small_net(m=8, L=2), small_data(3)
    q = NetworkParams(2.5 * p.A, p.W, p.B, p.arch, p.seed)
    assert np.allclose(forward(q, d.X).h[0], 2.5 * forward(p, d.X).h[0], rtol=1e-15)


def test_forward_backward_bitwise_deterministic(net_and_data):
    p, d = net_and_data
    a, b = full_gradient(p, d), full_gradient(p, d)
    assert a[0].value == b[0].value
    for l in range(p.L):
        assert np.array_equal(a[1].layer(l), b[1].layer(l))


def test_forward_norms_concentrate_m2048():
    p = init_network(ArchSpec(10, 2048, 1, 5), 0)
    d = generate_separated_dataset(3, 10, 0.1, seed=0)
    norms = forward(p, d.X).layer_norms()
    assert np.all((norms >= 0.9) & (norms <= 1.1))


def test_dataset_rejects_unnormalized_input():
    with pytest.raises(ValueError):
        Dataset(np.ones((2, 3)), np.zeros((2, 1)))
