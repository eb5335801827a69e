"""Central finite-difference oracle for layer and network gradients."""

import numpy as np

from qmap.regressor.layers import Layer


def bind_random(layer: Layer, rng, scale=0.3):
    params = {k: rng.normal(0, scale, s) for k, s in layer.param_shapes().items()}
    grads = {k: np.zeros(s) for k, s in layer.param_shapes().items()}
    layer.bind(params, grads)
    return params, grads


def rel_error(a, b) -> float:
    a, b = np.ravel(a), np.ravel(b)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def check_layer(layer: Layer, x: np.ndarray, rng, eps: float = 1e-6) -> dict:
    """Relative errors of analytic vs numerical gradients of ``sum(R * layer(x))``.

    Keys are parameter names plus ``"input"`` when the layer propagates
    input gradients.
    """
    params, grads = bind_random(layer, rng)
    y = layer.forward(x)
    R = rng.normal(size=y.shape)
    for g in grads.values():
        g[...] = 0
    dx = layer.backward(R)

    def loss(xx):
        return float(np.sum(R * layer.forward(xx)))

    out = {}
    for name, p in params.items():
        num = np.zeros_like(p)
        for i in np.ndindex(p.shape):
            old = p[i]
            p[i] = old + eps
            hi = loss(x)
            p[i] = old - eps
            lo = loss(x)
            p[i] = old
            num[i] = (hi - lo) / (2 * eps)
        out[name] = rel_error(grads[name], num)
    if dx is not None:
        num = np.zeros_like(x)
        for i in np.ndindex(x.shape):
            old = x[i]
            x[i] = old + eps
            hi = loss(x)
            x[i] = old - eps
            lo = loss(x)
            x[i] = old
            num[i] = (hi - lo) / (2 * eps)
        out["input"] = rel_error(dx, num)
    return out


def check_network(net, x, y, eps: float = 1e-6, max_weights: int | None = None, rng=None) -> float:
    """Relative error of the MSE weight gradient of a float64 network."""
    from qmap.regressor.train import compute_gradients, mse_loss
    compute_gradients(net, x, y)
    analytic = net.grads.copy()
    idx = np.arange(net.n_weights)
    if max_weights is not None and max_weights < len(idx):
        idx = (rng or np.random.default_rng(0)).choice(idx, max_weights, replace=False)
    num = np.zeros(len(idx))
    for j, i in enumerate(idx):
        old = net.weights[i]
        net.weights[i] = old + eps
        hi = mse_loss(net.forward(x), y)[0]
        net.weights[i] = old - eps
        lo = mse_loss(net.forward(x), y)[0]
        net.weights[i] = old
        num[j] = (hi - lo) / (2 * eps)
    return rel_error(analytic[idx], num)
