"""Adam, mean-squared-error training and learning-rate schedule."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from qmap.regressor.network import Network


class TrainingError(RuntimeError):
    """Optimization diverged or the data do not fit the network."""


@dataclass(frozen=True)
class TrainConfig:
    batch: int = 100
    lr0: float = 1e-3
    decay: float = 0.87
    epochs: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    val_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.batch < 1:
            raise ValueError("batch must be at least 1")
        if not 0 < self.decay <= 1:
            raise ValueError("decay must lie in (0, 1]")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if not 0 <= self.val_fraction < 1:
            raise ValueError("val_fraction must lie in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


def learning_rate(cfg: TrainConfig, epoch: int) -> float:
    """``lr0 * decay ** epoch`` with epochs counted from zero."""
    return cfg.lr0 * cfg.decay**epoch


class Adam:
    """Adam with bias correction acting on a flat parameter vector in place."""

    def __init__(self, n: int, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 dtype=np.float32):
        self.m = np.zeros(n, dtype=dtype)
        self.v = np.zeros(n, dtype=dtype)
        self.t = 0
        self.beta1, self.beta2, self.eps = beta1, beta2, eps

    @classmethod
    def for_network(cls, net: Network, cfg: TrainConfig) -> Adam:
        return cls(net.n_weights, cfg.beta1, cfg.beta2, cfg.eps, net.dtype)

    def step(self, weights: np.ndarray, grads: np.ndarray, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        self.m *= b1
        self.m += (1 - b1) * grads
        self.v *= b2
        self.v += (1 - b2) * grads * grads
        m_hat = self.m / (1 - b1**self.t)
        v_hat = self.v / (1 - b2**self.t)
        weights -= lr * m_hat / (np.sqrt(v_hat) + self.eps)


def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean over all elements and its gradient with respect to ``pred``."""
    diff = pred - target
    return float(np.mean(diff * diff)), (2.0 / diff.size) * diff


def compute_gradients(net: Network, x, y) -> float:
    """Fill ``net.grads`` with the MSE gradient on one batch; returns the loss."""
    net.grads[...] = 0
    pred = net.forward(x)
    loss, dpred = mse_loss(pred, np.asarray(y, dtype=net.dtype))
    net.backward(dpred)
    return loss


def backward_and_step(net: Network, opt: Adam, x, y, lr: float) -> float:
    """One Adam step on a batch; aborts on a non-finite loss or gradient."""
    if len(x) == 0:
        raise TrainingError("empty batch")
    with np.errstate(invalid="ignore", over="ignore"):
        loss = compute_gradients(net, x, y)
    if not np.isfinite(loss) or not np.all(np.isfinite(net.grads)):
        raise TrainingError(f"non-finite loss {loss} at Adam step {opt.t + 1}; "
                            f"max |grad| {np.nanmax(np.abs(net.grads)):.3g}")
    opt.step(net.weights, net.grads, lr)
    return loss


def evaluate_loss(net: Network, x, y, batch: int = 500) -> float:
    total = 0.0
    for lo in range(0, len(x), batch):
        pred = net.forward(x[lo:lo + batch])
        total += float(np.sum((pred - y[lo:lo + batch]) ** 2))
    return total / (len(x) * net.spec.output_dim)


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    learning_rate: list = field(default_factory=list)
    best_epoch: int = -1
    seconds: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


def split_indices(n: int, val_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded train/validation split; validation gets ``round(n * val_fraction)`` samples."""
    order = np.random.default_rng([seed, 1]).permutation(n)
    n_val = int(round(n * val_fraction)) if n > 1 else 0
    return np.sort(order[n_val:]), np.sort(order[:n_val])


def train(net: Network, inputs, labels, cfg: TrainConfig, log=None) -> tuple[Network, TrainHistory]:
    """Epoch-shuffled minibatch Adam on MSE.

    A ``val_fraction`` holdout is scored after every epoch and the weights
    with the lowest validation loss are restored at the end (the last
    epoch's weights when there is no holdout). ``log`` receives one line
    per epoch.
    """
    inputs = np.asarray(inputs)
    labels = np.asarray(labels, dtype=net.dtype)
    if len(inputs) == 0:
        raise TrainingError("empty dataset")
    if len(inputs) != len(labels):
        raise TrainingError("inputs and labels differ in length")
    if inputs.shape[1:] != net.spec.input_shape or labels.shape[1:] != (net.spec.output_dim,):
        raise TrainingError(f"data shapes {inputs.shape[1:]} -> {labels.shape[1:]} do not match "
                            f"network {net.spec.input_shape} -> ({net.spec.output_dim},)")
    tr, va = split_indices(len(inputs), cfg.val_fraction, cfg.seed)
    x_tr, y_tr = inputs[tr], labels[tr]
    x_va, y_va = inputs[va], labels[va]
    opt = Adam.for_network(net, cfg)
    rng = np.random.default_rng([cfg.seed, 2])
    hist = TrainHistory()
    best, best_weights = np.inf, net.weights.copy()
    start = time.perf_counter()
    for epoch in range(cfg.epochs):
        lr = learning_rate(cfg, epoch)
        order = rng.permutation(len(x_tr))
        total = 0.0
        for lo in range(0, len(order), cfg.batch):
            idx = order[lo:lo + cfg.batch]
            total += backward_and_step(net, opt, x_tr[idx], y_tr[idx], lr) * len(idx)
        hist.train_loss.append(total / len(order))
        hist.learning_rate.append(lr)
        score = evaluate_loss(net, x_va, y_va) if len(va) else hist.train_loss[-1]
        hist.val_loss.append(score if len(va) else None)
        if score < best or not len(va):
            best, best_weights, hist.best_epoch = score, net.weights.copy(), epoch
        if log is not None:
            val = f"{score:.5g}" if len(va) else "-"
            log(f"epoch {epoch + 1}/{cfg.epochs} lr {lr:.3g} train {hist.train_loss[-1]:.5g} val {val}")
    net.weights[...] = best_weights
    hist.seconds = time.perf_counter() - start
    return net, hist
