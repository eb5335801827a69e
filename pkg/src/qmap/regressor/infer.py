"""Voxelwise parameter estimation with a trained network."""

from __future__ import annotations

import numpy as np

from qmap.forward.dataset import pad_signals, scalars_to_physical
from qmap.qmatrix import QmatrixConfig, encode
from qmap.regressor.network import Network
from qmap.scheme import GradientScheme


class InferenceError(ValueError):
    """Signals, scheme and network do not agree."""


def encode_inputs(net: Network, scheme: GradientScheme, signals) -> np.ndarray:
    """Turn ``(N, K)`` signals into the network's input representation."""
    enc = dict(net.spec.encoding)
    if enc.get("kind") == "padded":
        return pad_signals(signals, enc["width"])
    enc.pop("kind", None)
    q_cfg = QmatrixConfig(**enc)
    return encode(scheme, signals, q_cfg).data.astype(np.float32)


def infer_volume(net: Network, signals, scheme: GradientScheme, mask=None,
                 batch: int = 256) -> np.ndarray:
    """Parameter maps ``(*spatial, P)`` in physical units for ``(*spatial, K)`` signals.

    Voxels outside ``mask`` are zero.
    """
    signals = np.asarray(signals, dtype=float)
    if signals.shape[-1] != len(scheme):
        raise InferenceError(f"volume has {signals.shape[-1]} signals per voxel, "
                             f"scheme has {len(scheme)} entries")
    spatial = signals.shape[:-1]
    if mask is None:
        mask = np.ones(spatial, dtype=bool)
    mask = np.asarray(mask).astype(bool)
    if mask.shape != spatial:
        raise InferenceError(f"mask shape {mask.shape} does not match volume {spatial}")
    out = np.zeros(spatial + (net.spec.output_dim,))
    voxels = signals[mask]
    pred = np.empty((len(voxels), net.spec.output_dim))
    for lo in range(0, len(voxels), batch):
        x = encode_inputs(net, scheme, voxels[lo:lo + batch])
        pred[lo:lo + batch] = net.forward(x)
    out[mask] = scalars_to_physical(pred, net.spec.model)
    return out
