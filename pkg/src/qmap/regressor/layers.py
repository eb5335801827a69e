"""Layer primitives with hand-written forward and backward passes.

Arrays are channels-last: ``(batch, *spatial, channels)``. Parameters live
in the owning :class:`~qmap.regressor.network.Network` flat store; a layer
only receives views into it via :meth:`Layer.bind`.
"""

from __future__ import annotations

import itertools

import numpy as np


class Layer:
    """Base class. Subclasses declare ``param_shapes`` and implement the passes."""

    # the network clears this on its first layer; backward then returns None
    needs_input_grad = True

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        return {}

    def fan(self) -> tuple[int, int] | None:
        """(fan_in, fan_out) of the weight tensor, or None for parameter-free layers."""
        return None

    def bind(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.p = params
        self.g = grads

    def output_shape(self, shape: tuple[int, ...]) -> tuple[int, ...]:
        return shape

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def describe(self) -> dict:
        return {"type": type(self).__name__}


def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    """Unfold ``k``-wide 'same' windows: (N, *S, C) -> (N, *S, k**ndim * C).

    Columns are offset-major (row-major over the kernel window), channel-minor.
    """
    nd = x.ndim - 2
    r = k // 2
    spatial = x.shape[1:-1]
    c = x.shape[-1]
    xp = np.pad(x, [(0, 0)] + [(r, r)] * nd + [(0, 0)])
    cols = np.empty(x.shape[:-1] + (k**nd * c,), dtype=x.dtype)
    for j, off in enumerate(itertools.product(range(k), repeat=nd)):
        window = (slice(None),) + tuple(slice(o, o + n) for o, n in zip(off, spatial))
        cols[..., j * c:(j + 1) * c] = xp[window]
    return cols


def _flat_offsets(padded: tuple[int, ...], k: int) -> list[int]:
    """Row offsets of each kernel tap inside a flattened padded volume."""
    strides = [int(np.prod(padded[d + 1:])) for d in range(len(padded))]
    return [sum(o * s for o, s in zip(off, strides))
            for off in itertools.product(range(k), repeat=len(padded))]


# below this many unfolded columns the im2col copy is cheaper than k**ndim small GEMMs
_IM2COL_MAX_COLS = 256


class Conv(Layer):
    """Stride-1 'same' convolution in 2 or 3 spatial dimensions (odd kernel).

    Wide inputs use a shifted-GEMM scheme: the zero-padded batch is flattened
    to rows, every kernel tap becomes a contiguous row slice, and outputs are
    computed on the padded grid and cropped. Narrow inputs use im2col.
    """

    def __init__(self, in_ch: int, out_ch: int, kernel: int, ndim: int = 2):
        if kernel % 2 != 1:
            raise ValueError("kernel size must be odd")
        if ndim not in (2, 3):
            raise ValueError("only 2D and 3D convolutions are supported")
        self.in_ch, self.out_ch, self.k, self.nd = in_ch, out_ch, kernel, ndim
        self.use_im2col = in_ch * kernel**ndim <= _IM2COL_MAX_COLS

    def param_shapes(self):
        return {"W": (self.in_ch * self.k**self.nd, self.out_ch), "b": (self.out_ch,)}

    def fan(self):
        kk = self.k**self.nd
        return self.in_ch * kk, self.out_ch * kk

    def output_shape(self, shape):
        if len(shape) != self.nd + 1 or shape[-1] != self.in_ch:
            raise ValueError(f"Conv expects (*{self.nd}d spatial, {self.in_ch}) input, got {shape}")
        return shape[:-1] + (self.out_ch,)

    def _taps(self) -> np.ndarray:
        return self.p["W"].reshape(-1, self.in_ch, self.out_ch)

    def forward(self, x):
        if self.use_im2col:
            self._cols = _im2col(x, self.k)
            return self._cols @ self.p["W"] + self.p["b"]
        r = self.k // 2
        xp = np.pad(x, [(0, 0)] + [(r, r)] * self.nd + [(0, 0)])
        self._xshape = x.shape
        self._padded = xp.shape[1:-1]
        self._flat = flat = xp.reshape(-1, self.in_ch)
        offs = _flat_offsets(self._padded, self.k)
        m = flat.shape[0] - offs[-1]
        out = np.zeros((flat.shape[0], self.out_ch), dtype=x.dtype)
        tmp = np.empty((m, self.out_ch), dtype=x.dtype)
        for s, w in zip(offs, self._taps()):
            np.matmul(flat[s:s + m], w, out=tmp)
            out[:m] += tmp
        out = out.reshape(x.shape[:1] + self._padded + (self.out_ch,))
        crop = (slice(None),) + tuple(slice(0, n) for n in x.shape[1:-1])
        return out[crop] + self.p["b"]

    def backward(self, dy):
        self.g["b"] += dy.reshape(-1, self.out_ch).sum(axis=0)
        if self.use_im2col:
            cols = self._cols
            self._cols = None
            self.g["W"] += cols.reshape(-1, cols.shape[-1]).T @ dy.reshape(-1, self.out_ch)
            if not self.needs_input_grad:
                return None
            # input gradient: correlate dy with the spatially flipped, transposed kernel
            w = self._taps()[::-1].transpose(0, 2, 1).reshape(-1, self.in_ch)
            return _im2col(dy, self.k) @ w
        flat, self._flat = self._flat, None
        grid = np.zeros(dy.shape[:1] + self._padded + (self.out_ch,), dtype=dy.dtype)
        crop = (slice(None),) + tuple(slice(0, n) for n in dy.shape[1:-1])
        grid[crop] = dy
        grid = grid.reshape(-1, self.out_ch)
        offs = _flat_offsets(self._padded, self.k)
        m = flat.shape[0] - offs[-1]
        gw = self.g["W"].reshape(-1, self.in_ch, self.out_ch)
        dflat = np.zeros_like(flat)
        for j, (s, w) in enumerate(zip(offs, self._taps())):
            gw[j] += flat[s:s + m].T @ grid[:m]
            if self.needs_input_grad:
                dflat[s:s + m] += grid[:m] @ w.T
        if not self.needs_input_grad:
            return None
        r = self.k // 2
        dxp = dflat.reshape(dy.shape[:1] + self._padded + (self.in_ch,))
        inner = (slice(None),) + tuple(slice(r, r + n) for n in self._xshape[1:-1])
        return dxp[inner]

    def describe(self):
        return {"type": "Conv", "in": self.in_ch, "out": self.out_ch, "kernel": self.k, "ndim": self.nd}


class Dense(Layer):
    def __init__(self, n_in: int, n_out: int):
        self.n_in, self.n_out = n_in, n_out

    def param_shapes(self):
        return {"W": (self.n_in, self.n_out), "b": (self.n_out,)}

    def fan(self):
        return self.n_in, self.n_out

    def output_shape(self, shape):
        if shape != (self.n_in,):
            raise ValueError(f"Dense expects ({self.n_in},) input, got {shape}")
        return (self.n_out,)

    def forward(self, x):
        self._x = x
        return x @ self.p["W"] + self.p["b"]

    def backward(self, dy):
        self.g["W"] += self._x.T @ dy
        self.g["b"] += dy.sum(axis=0)
        if not self.needs_input_grad:
            return None
        return dy @ self.p["W"].T

    def describe(self):
        return {"type": "Dense", "in": self.n_in, "out": self.n_out}


class LeakyReLU(Layer):
    def __init__(self, slope: float = 0.01):
        self.slope = slope

    def forward(self, x):
        self._scale = np.where(x < 0, x.dtype.type(self.slope), x.dtype.type(1))
        return x * self._scale

    def backward(self, dy):
        return dy * self._scale

    def describe(self):
        return {"type": "LeakyReLU", "slope": self.slope}


class ReLU(LeakyReLU):
    def __init__(self):
        super().__init__(slope=0.0)

    def describe(self):
        return {"type": "ReLU"}


class GlobalAvgPool(Layer):
    """Mean over all spatial positions: (N, *S, C) -> (N, C)."""

    def output_shape(self, shape):
        return (shape[-1],)

    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1, x.shape[-1]).mean(axis=1)

    def backward(self, dy):
        n_pos = int(np.prod(self._shape[1:-1]))
        out = np.broadcast_to((dy / n_pos)[:, None, :], (dy.shape[0], n_pos, dy.shape[1]))
        return out.reshape(self._shape).copy()


class Flatten(Layer):
    def output_shape(self, shape):
        return (int(np.prod(shape)),)

    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._shape)


class SignalFeatures(Layer):
    """Expand each input channel into (signal, occupancy, -log signal).

    Empty cells hold exactly zero; occupancy tells them apart from strongly
    attenuated signals, and the log turns exponential attenuation into a
    quantity linear in the diffusion coefficients.
    """

    floor = 1e-3

    def output_shape(self, shape):
        return shape[:-1] + (3 * shape[-1],)

    def forward(self, x):
        occ = (x != 0).astype(x.dtype)
        logs = -np.log(np.maximum(np.abs(x), self.floor)) * occ
        return np.concatenate([x, occ, logs], axis=-1)

    def backward(self, dy):
        raise NotImplementedError("SignalFeatures must be the first layer")


class CoordChannels(Layer):
    """Append one channel per spatial axis holding the cell-centre coordinate
    in [-1, 1], so translation-equivariant convolutions can see position."""

    def output_shape(self, shape):
        return shape[:-1] + (shape[-1] + len(shape) - 1,)

    def forward(self, x):
        spatial = x.shape[1:-1]
        axes = [(np.arange(n) + 0.5) / n * 2 - 1 for n in spatial]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).astype(x.dtype)
        self._c = x.shape[-1]
        return np.concatenate([x, np.broadcast_to(grid, x.shape[:1] + grid.shape)], axis=-1)

    def backward(self, dy):
        return dy[..., :self._c]


class Residual(Layer):
    """``act(x + conv2(act(conv1(x))))`` with an identity skip."""

    def __init__(self, channels: int, kernel: int = 3, ndim: int = 2, slope: float = 0.01):
        self.conv1 = Conv(channels, channels, kernel, ndim)
        self.act1 = LeakyReLU(slope)
        self.conv2 = Conv(channels, channels, kernel, ndim)
        self.act2 = LeakyReLU(slope)
        self.channels, self.k, self.nd, self.slope = channels, kernel, ndim, slope

    def param_shapes(self):
        shapes = {}
        for tag, conv in (("1", self.conv1), ("2", self.conv2)):
            for name, shp in conv.param_shapes().items():
                shapes[name + tag] = shp
        return shapes

    def sublayer_fans(self) -> dict[str, tuple[int, int]]:
        return {"W1": self.conv1.fan(), "W2": self.conv2.fan()}

    def bind(self, params, grads):
        super().bind(params, grads)
        for tag, conv in (("1", self.conv1), ("2", self.conv2)):
            conv.bind({"W": params["W" + tag], "b": params["b" + tag]},
                      {"W": grads["W" + tag], "b": grads["b" + tag]})

    def output_shape(self, shape):
        return self.conv2.output_shape(self.conv1.output_shape(shape))

    def forward(self, x):
        h = self.act1.forward(self.conv1.forward(x))
        return self.act2.forward(x + self.conv2.forward(h))

    def backward(self, dy):
        d = self.act2.backward(dy)
        dh = self.conv1.backward(self.act1.backward(self.conv2.backward(d)))
        return d + dh

    def describe(self):
        return {"type": "Residual", "channels": self.channels, "kernel": self.k,
                "ndim": self.nd, "slope": self.slope}


def layer_from_description(d: dict) -> Layer:
    kind = d["type"]
    if kind == "Conv":
        return Conv(d["in"], d["out"], d["kernel"], d["ndim"])
    if kind == "Dense":
        return Dense(d["in"], d["out"])
    if kind == "LeakyReLU":
        return LeakyReLU(d["slope"])
    if kind == "ReLU":
        return ReLU()
    if kind == "GlobalAvgPool":
        return GlobalAvgPool()
    if kind == "Flatten":
        return Flatten()
    if kind == "SignalFeatures":
        return SignalFeatures()
    if kind == "CoordChannels":
        return CoordChannels()
    if kind == "Residual":
        return Residual(d["channels"], d["kernel"], d["ndim"], d["slope"])
    raise ValueError(f"unknown layer type {kind!r}")
