import numpy as np
import pytest

from gradcheck import bind_random, check_layer, check_network
from qmap.regressor.layers import (Conv, CoordChannels, Dense, Flatten, GlobalAvgPool, LeakyReLU, ReLU,
                                   Residual, SignalFeatures, layer_from_description)
from qmap.regressor.network import init_network, resconv_spec

TOL = 1e-4


def away_from_zero(rng, shape):
    """Inputs bounded away from the activation kink so differences stay smooth."""
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < 0.05, 0.1 * np.sign(x) + 0.05, x)


@pytest.mark.parametrize("ndim,shape,in_ch,k", [
    (2, (2, 5, 6), 2, 3),     # im2col
    (2, (2, 7, 7), 3, 7),     # im2col at the cap
    (2, (1, 6, 5), 8, 7),     # shifted GEMM
    (3, (1, 3, 4, 3), 2, 3),  # im2col 3D
    (3, (1, 4, 3, 4), 12, 3),  # shifted GEMM 3D
])
def test_conv_gradients(rng, ndim, shape, in_ch, k):
    layer = Conv(in_ch, 3, k, ndim)
    expect = in_ch * k**ndim <= 256
    assert layer.use_im2col == expect
    errs = check_layer(layer, rng.normal(size=shape + (in_ch,)), rng)
    assert set(errs) == {"W", "b", "input"}
    assert max(errs.values()) < TOL, errs


def test_conv_paths_agree(rng):
    x = rng.normal(size=(2, 6, 5, 4))
    a, b = Conv(4, 3, 5, 2), Conv(4, 3, 5, 2)
    params, _ = bind_random(a, rng)
    b.bind(params, {k: np.zeros_like(v) for k, v in params.items()})
    a.use_im2col, b.use_im2col = True, False
    np.testing.assert_allclose(a.forward(x), b.forward(x), atol=1e-12)
    dy = rng.normal(size=(2, 6, 5, 3))
    np.testing.assert_allclose(a.backward(dy), b.backward(dy), atol=1e-12)
    np.testing.assert_allclose(a.g["W"], b.g["W"], atol=1e-12)


def test_conv_matches_direct_correlation(rng):
    from scipy.signal import correlate
    x = rng.normal(size=(1, 6, 7, 1))
    layer = Conv(1, 1, 3, 2)
    p, _ = bind_random(layer, rng)
    kernel = p["W"].reshape(3, 3)
    ref = correlate(x[0, ..., 0], kernel, mode="same") + p["b"][0]
    np.testing.assert_allclose(layer.forward(x)[0, ..., 0], ref, atol=1e-12)


def test_dense_gradients(rng):
    errs = check_layer(Dense(5, 4), rng.normal(size=(3, 5)), rng)
    assert max(errs.values()) < TOL


@pytest.mark.parametrize("layer", [LeakyReLU(0.01), LeakyReLU(0.2), ReLU()])
def test_activation_gradients(rng, layer):
    errs = check_layer(layer, away_from_zero(rng, (3, 4, 2)), rng)
    assert errs["input"] < TOL


@pytest.mark.parametrize("layer,shape", [(GlobalAvgPool(), (2, 3, 4, 5)), (Flatten(), (2, 3, 4, 5)),
                                         (CoordChannels(), (2, 3, 4, 2)),
                                         (GlobalAvgPool(), (2, 2, 3, 2, 3))])
def test_shape_layer_gradients(rng, layer, shape):
    errs = check_layer(layer, rng.normal(size=shape), rng)
    assert errs["input"] < TOL


@pytest.mark.parametrize("ndim", [2, 3])
def test_residual_gradients(rng, ndim):
    layer = Residual(3, 3, ndim, 0.01)
    shape = (1, 4, 4, 3) if ndim == 2 else (1, 3, 3, 3, 3)
    errs = check_layer(layer, away_from_zero(rng, shape), rng)
    assert max(errs.values()) < TOL, errs


def test_signal_features_values():
    x = np.array([[[0.0, 0.5, 1e-5]]])
    out = SignalFeatures().forward(x)
    np.testing.assert_allclose(out[0, 0], [0, 0.5, 1e-5, 0, 1, 1, 0, -np.log(0.5), -np.log(1e-3)])


def test_coord_channels_values():
    out = CoordChannels().forward(np.zeros((1, 2, 4, 1)))
    np.testing.assert_allclose(out[0, :, 0, 1], [-0.5, 0.5])
    np.testing.assert_allclose(out[0, 0, :, 2], [-0.75, -0.25, 0.25, 0.75])


@pytest.mark.parametrize("layer", [Conv(2, 3, 5, 3), Dense(3, 4), LeakyReLU(0.3), ReLU(), GlobalAvgPool(),
                                   Flatten(), SignalFeatures(), CoordChannels(), Residual(4, 3, 2, 0.1)])
def test_description_roundtrip(layer):
    again = layer_from_description(layer.describe())
    assert type(again) is type(layer) and again.describe() == layer.describe()


def test_unknown_description():
    with pytest.raises(ValueError):
        layer_from_description({"type": "Pool"})


def test_conv_rejects_even_kernel():
    with pytest.raises(ValueError):
        Conv(1, 1, 4)


@pytest.mark.parametrize("opts", [{"head": "gap"}, {"head": "flatten", "coords": True},
                                  {"head": "gap", "features": True, "coords": True}])
def test_small_network_gradients(opts):
    spec = resconv_spec((5, 5, 3), 2, channels=3, blocks=1, hidden=4, first_kernel=3, seed=2, **opts)
    net = init_network(spec, np.float64)
    rng = np.random.default_rng(0)
    x = rng.uniform(0.1, 1.0, (3, 5, 5, 3))
    x[:, 0, 0] = 0.0
    y = rng.normal(size=(3, 2))
    assert net.n_weights < 1000
    assert check_network(net, x, y) < TOL
