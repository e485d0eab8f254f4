import numpy as np
import pytest

from opl.archext import (
    ConvSpec,
    ResidualSpec,
    build_patch_map,
    conv_arch,
    residual_arch,
    spec_from_dict,
    spectral_product_probe_resnet,
    validate_patch_map,
)
from opl.datagen import generate_separated_dataset
from opl.netcore import finite_difference_check, forward, init_network


def test_circulant_map_5_2():
    assert build_patch_map(5, 2) == ((0, 1), (1, 2), (2, 3), (3, 4), (4, 0))


def test_full_patch_map():
    Q = build_patch_map(4, 4)
    assert all(sorted(S) == [0, 1, 2, 3] for S in Q)


def test_random_regular_map_is_regular():
    validate_patch_map(build_patch_map(9, 3, "random_regular", seed=5), 9, 3)


@pytest.mark.parametrize("Q", [((0, 1), (1, 2), (2, 0), (0, 1)), ((0, 0), (1, 2), (2, 3), (3, 1)), ((0, 5),)])
def test_bad_patch_maps_rejected(Q):
    with pytest.raises(ValueError):
        validate_patch_map(Q, 4 if len(Q) == 4 else 1, 2)


def test_patch_size_out_of_range():
    with pytest.raises(ValueError):
        build_patch_map(3, 4)


def test_spec_dict_round_trip():
    c = ConvSpec.make(6, 4, 3, 2)
    r = ResidualSpec.make(64, 5)
    assert spec_from_dict(c.to_dict()) == c and spec_from_dict(r.to_dict()) == r


def _resnet(width, depth, tau, seed=0, input_dim=6):
    spec = ResidualSpec(width, depth, tau)
    return spec, init_network(residual_arch(spec, input_dim), seed, ext=spec)


def test_zero_tau_resnet_hidden_layers_are_identity():
    _, p = _resnet(16, 4, 0.0)
    x = generate_separated_dataset(2, 6, 0.1, seed=0).X
    t = forward(p, x)
    for l in range(1, p.L):
        assert np.array_equal(t.h[l], t.h[0])


def test_zero_tau_product_norm_at_most_one():
    spec, p = _resnet(32, 5, 0.0)
    rep = spectral_product_probe_resnet(spec, p)
    assert rep.estimate <= 1.0 + 1e-9


def test_default_tau_product_under_cap():
    spec, p = _resnet(256, 8, ResidualSpec.make(256, 8).tau)
    assert spectral_product_probe_resnet(spec, p).passed


def test_residual_warning():
    assert ResidualSpec(64, 10, 1.0).warning() is not None
    assert ResidualSpec.make(64, 10).warning() is None


@pytest.mark.parametrize("seed", range(3))
def test_cnn_gradient_matches_finite_differences(seed):
    spec = ConvSpec.make(4, 3, 2, 3, seed=seed)
    p = init_network(conv_arch(spec), seed, ext=spec)
    d = generate_separated_dataset(3, 4, 0.1, seed=seed)
    assert finite_difference_check(p, d) < 1e-6


@pytest.mark.parametrize("seed", range(3))
def test_resnet_gradient_matches_finite_differences(seed):
    _, p = _resnet(8, 3, 0.1, seed=seed)
    d = generate_separated_dataset(3, 6, 0.1, seed=seed)
    assert finite_difference_check(p, d) < 1e-6


def test_cnn_forward_shapes():
    spec = ConvSpec.make(5, 4, 3, 2)
    p = init_network(conv_arch(spec, 2), 0, ext=spec)
    t = forward(p, generate_separated_dataset(3, 5, 0.1, seed=0).X)
    assert t.y.shape == (3, 2) and t.h[0].shape == (3, 20)
