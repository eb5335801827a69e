"""Network specification, flat weight store and Xavier initialization."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from qmap.regressor.layers import (Conv, CoordChannels, Dense, Flatten, GlobalAvgPool, Layer, LeakyReLU,
                                   ReLU, Residual, SignalFeatures)

MLP_WIDTHS = (256, 256, 256)
MLP_INPUT = {"dti": 32, "noddi": 104}


class NetworkError(ValueError):
    """Invalid network specification or input shape."""


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture plus the input encoding the weights were trained for.

    ``kind="resconv"``: optional input expansion (``features``: occupancy
    and log-signal channels; ``coords``: cell-coordinate channels), a first
    ``first_kernel``-wide conv to ``channels``, ``blocks`` residual blocks, a
    pooling head (``"gap"`` or ``"flatten"``), a hidden dense layer of
    ``hidden`` units and a linear output.
    ``kind="mlp"``: dense layers of ``widths`` with ReLU.
    ``encoding`` records how signals become inputs (Qmatrix config or
    zero-padding) so inference needs only the weight file.
    """

    kind: str
    input_shape: tuple
    output_dim: int
    model: str = "dti"
    channels: int = 32
    blocks: int = 2
    hidden: int = 128
    first_kernel: int = 7
    head: str = "gap"
    coords: bool = True
    features: bool = True
    widths: tuple = MLP_WIDTHS
    slope: float = 0.01
    seed: int = 0
    encoding: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        object.__setattr__(self, "widths", tuple(int(v) for v in self.widths))
        if self.kind not in ("resconv", "mlp"):
            raise NetworkError(f"unknown network kind {self.kind!r}")
        if self.output_dim < 1:
            raise NetworkError("output_dim must be positive")
        if self.head not in ("gap", "flatten"):
            raise NetworkError(f"unknown head {self.head!r}")

    @property
    def ndim(self) -> int:
        """Spatial dimensionality of the convolutions (0 for an MLP)."""
        if self.kind == "mlp":
            return 0
        return 3 if self.encoding.get("variant") == "3d" else 2

    @property
    def layer_input_shape(self) -> tuple:
        """Shape fed to the first layer; a 3D Qmatrix gains a unit channel axis."""
        return self.input_shape + (1,) if self.ndim == 3 else self.input_shape

    def to_dict(self) -> dict:
        d = asdict(self)
        d["input_shape"] = list(self.input_shape)
        d["widths"] = list(self.widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> NetworkSpec:
        return cls(**d)


def resconv_spec(input_shape, output_dim: int, model: str = "dti", encoding: dict | None = None,
                 **kw) -> NetworkSpec:
    return NetworkSpec("resconv", tuple(input_shape), output_dim, model=model,
                       encoding=dict(encoding or {}), **kw)


def mlp_spec(model: str, output_dim: int | None = None, width: int | None = None, **kw) -> NetworkSpec:
    """Scheme-locked baseline: padded signals through three hidden layers."""
    width = width or MLP_INPUT[model]
    out = output_dim or (4 if model == "dti" else 3)
    return NetworkSpec("mlp", (width,), out, model=model,
                       encoding={"kind": "padded", "width": width}, **kw)


def build_layers(spec: NetworkSpec) -> list[Layer]:
    if spec.kind == "mlp":
        if len(spec.input_shape) != 1:
            raise NetworkError("an MLP takes a flat input vector")
        sizes = (spec.input_shape[0],) + spec.widths
        layers: list[Layer] = []
        for a, b in zip(sizes[:-1], sizes[1:]):
            layers += [Dense(a, b), ReLU()]
        return layers + [Dense(sizes[-1], spec.output_dim)]
    nd = spec.ndim
    shape = spec.layer_input_shape
    if len(shape) != nd + 1:
        raise NetworkError(f"a {nd}d resconv needs {nd} spatial axes plus channels, got {shape}")
    c = spec.channels
    layers: list[Layer] = []
    in_ch = shape[-1]
    if spec.features:
        layers.append(SignalFeatures())
        in_ch *= 3
    if spec.coords:
        layers.append(CoordChannels())
        in_ch += nd
    layers += [Conv(in_ch, c, spec.first_kernel, nd), LeakyReLU(spec.slope)]
    layers += [Residual(c, 3, nd, spec.slope) for _ in range(spec.blocks)]
    if spec.head == "gap":
        layers.append(GlobalAvgPool())
        flat = c
    else:
        layers.append(Flatten())
        flat = int(np.prod(shape[:-1])) * c
    return layers + [Dense(flat, spec.hidden), LeakyReLU(spec.slope), Dense(spec.hidden, spec.output_dim)]


class Network:
    """Layers whose parameters are views into one flat weight vector.

    ``weights`` and ``grads`` are contiguous arrays of equal length; an
    optimizer updates ``weights`` in place.
    """

    def __init__(self, spec: NetworkSpec, dtype=np.float32):
        self.spec = spec
        self.dtype = np.dtype(dtype)
        self.layers = build_layers(spec)
        shape = spec.layer_input_shape
        self.param_index = []          # (layer index, name, shape, offset)
        offset = 0
        for i, layer in enumerate(self.layers):
            try:
                shape = layer.output_shape(shape)
            except ValueError as exc:
                raise NetworkError(f"layer {i} ({type(layer).__name__}): {exc}") from exc
            for name, shp in layer.param_shapes().items():
                self.param_index.append((i, name, tuple(shp), offset))
                offset += int(np.prod(shp))
        if shape != (spec.output_dim,):
            raise NetworkError(f"network ends in shape {shape}, expected ({spec.output_dim},)")
        self.weights = np.zeros(offset, dtype=self.dtype)
        self.grads = np.zeros(offset, dtype=self.dtype)
        self._bind()
        for layer in self.layers:
            # nothing upstream of the first parametrized layer needs gradients
            layer.needs_input_grad = False
            if layer.param_shapes():
                break

    def _bind(self):
        params = [dict() for _ in self.layers]
        grads = [dict() for _ in self.layers]
        for i, name, shp, off in self.param_index:
            n = int(np.prod(shp))
            params[i][name] = self.weights[off:off + n].reshape(shp)
            grads[i][name] = self.grads[off:off + n].reshape(shp)
        for layer, p, g in zip(self.layers, params, grads):
            layer.bind(p, g)

    @property
    def n_weights(self) -> int:
        return self.weights.size

    def set_weights(self, flat) -> None:
        flat = np.asarray(flat)
        if flat.shape != self.weights.shape:
            raise NetworkError(f"expected {self.weights.size} weights, got {flat.size}")
        if not np.all(np.isfinite(flat)):
            raise NetworkError("non-finite weights")
        self.weights[...] = flat

    def astype(self, dtype) -> Network:
        net = Network(self.spec, dtype)
        net.weights[...] = self.weights
        return net

    def _prepare(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=self.dtype)
        if x.shape[1:] != self.spec.input_shape:
            raise NetworkError(f"input shape {x.shape[1:]} does not match {self.spec.input_shape}")
        return x.reshape((x.shape[0],) + self.spec.layer_input_shape)

    def forward(self, x) -> np.ndarray:
        """Batched forward pass, caching what backward needs."""
        h = self._prepare(x)
        for layer in self.layers:
            h = layer.forward(h)
        return h

    def backward(self, dy) -> None:
        """Accumulate parameter gradients into ``grads`` for output gradient ``dy``."""
        d = np.asarray(dy, dtype=self.dtype)
        for layer in reversed(self.layers):
            d = layer.backward(d)
            if d is None:
                break

    def predict(self, x, batch: int = 256) -> np.ndarray:
        """Forward pass in chunks; safe for large inputs."""
        x = np.asarray(x)
        if x.ndim == len(self.spec.input_shape):
            return self.predict(x[None], batch)[0]
        out = np.empty((len(x), self.spec.output_dim), dtype=self.dtype)
        for lo in range(0, len(x), batch):
            out[lo:lo + batch] = self.forward(x[lo:lo + batch])
        return out


def xavier_limit(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def init_network(spec: NetworkSpec, dtype=np.float32) -> Network:
    """Glorot-uniform weights and zero biases, deterministic in ``spec.seed``."""
    net = Network(spec, dtype)
    rng = np.random.default_rng(spec.seed)
    for i, name, shp, off in net.param_index:
        if not name.startswith("W"):
            continue
        layer = net.layers[i]
        fans = layer.sublayer_fans()[name] if isinstance(layer, Residual) else layer.fan()
        n = int(np.prod(shp))
        net.weights[off:off + n] = rng.uniform(-1, 1, n) * xavier_limit(*fans)
    return net


def forward_pass(net: Network, x) -> np.ndarray:
    """Outputs for one input (shape ``spec.input_shape``) or a batch of them."""
    x = np.asarray(x)
    if x.ndim == len(net.spec.input_shape):
        return net.forward(x[None])[0]
    return net.forward(x)
