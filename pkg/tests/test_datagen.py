import math
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, strategies as st

from opl.datagen import InfeasibleError, check_delta, generate_separated_dataset, normalize_inputs
from opl.io import load_checkpoint, load_dataset, save_checkpoint, save_dataset
from opl.netcore import ArchSpec, init_network

R2 = math.sqrt(2)


def test_normalize_unit_vector():
    X = normalize_inputs([[1.0, 0.0]])
    assert np.allclose(X, [[1 / R2, 0, 0, 1 / R2]], atol=1e-15)


def test_normalize_three_four():
    X = normalize_inputs([[3.0, 4.0]])[0]
    assert X[:2] == pytest.approx([3 / (5 * R2), 4 / (5 * R2)], abs=1e-15)
    assert X[2] == pytest.approx(0.0, abs=1e-12)
    assert X[3] == pytest.approx(1 / R2)
    assert np.linalg.norm(X) == pytest.approx(1.0, abs=1e-15)


@given(st.lists(st.lists(st.floats(-10, 10), min_size=3, max_size=3), min_size=1, max_size=6))
def test_normalize_idempotent(raw):
    raw = np.asarray(raw)
    if np.linalg.norm(raw, axis=1).max() < 1e-6:
        return
    X = normalize_inputs(raw)
    again = normalize_inputs(X[:, :-2])
    assert np.allclose(again, X, atol=1e-12)


def test_antipodal_pair_distance():
    X = normalize_inputs([[1.0, 0.0], [-1.0, 0.0]])
    assert check_delta(X) == pytest.approx(R2, abs=1e-15)


def test_single_sample_has_infinite_delta():
    d = generate_separated_dataset(1, 5, 0.1, seed=0)
    assert d.certified_delta == math.inf


def test_pairwise_distances_n10():
    d = generate_separated_dataset(10, 20, 0.1, seed=3)
    dists = [np.linalg.norm(d.X[i] - d.X[j]) for i, j in combinations(range(10), 2)]
    assert len(dists) == 45 and min(dists) >= 0.1
    assert check_delta(d) == pytest.approx(min(dists), abs=1e-15)


def test_duplicate_point_gives_zero():
    d = generate_separated_dataset(4, 6, 0.1, seed=1)
    X = np.vstack([d.X, d.X[2]])
    assert check_delta(X) == 0.0


def test_hand_points():
    X = normalize_inputs([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])
    # free parts on a circle of radius 1/sqrt(2): quarter turn chord is 1, half turn is sqrt(2)
    assert check_delta(X) == pytest.approx(1.0, abs=1e-15)


@given(n=st.integers(2, 12), dim=st.integers(3, 12), delta=st.floats(0.05, 0.5), seed=st.integers(0, 1000))
def test_generated_data_meets_target(n, dim, delta, seed):
    try:
        d = generate_separated_dataset(n, dim, delta, seed=seed)
    except InfeasibleError:
        return
    assert check_delta(d) >= delta
    assert np.allclose(np.linalg.norm(d.X, axis=1), 1.0)
    assert np.all(np.linalg.norm(d.Y, axis=1) <= 1.0 + 1e-12)


def test_infeasible_packing_is_reported():
    with pytest.raises(InfeasibleError):
        generate_separated_dataset(50, 2, 0.9, seed=0)


def test_classification_labels():
    d = generate_separated_dataset(12, 6, 0.1, "classification", seed=0, output_dim=3)
    assert d.Y.dtype.kind == "i" and set(d.Y.tolist()) <= {0, 1, 2}


def test_dataset_and_checkpoint_round_trip(tmp_path):
    d = generate_separated_dataset(5, 6, 0.1, seed=2)
    d2 = load_dataset(save_dataset(d, tmp_path / "d.bin"))
    assert np.array_equal(d.X, d2.X) and np.array_equal(d.Y, d2.Y)
    assert d2.certified_delta == d.certified_delta
    one = generate_separated_dataset(1, 6, 0.1, seed=2)
    assert load_dataset(save_dataset(one, tmp_path / "one.bin")).certified_delta == math.inf
    p = init_network(ArchSpec(6, 12, 2, 3), 4)
    q = load_checkpoint(save_checkpoint(p, tmp_path / "p.bin"))
    assert q.fingerprint() == p.fingerprint()
    assert q.arch == p.arch and q.seed == p.seed
