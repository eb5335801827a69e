"""Weight files: ``QNET`` magic, spec JSON and little-endian float32 weights."""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from qmap.regressor.network import Network, NetworkSpec

MAGIC = b"QNET"


class WeightFileError(ValueError):
    """Malformed weight file."""


def save_network(path, net: Network) -> None:
    spec = json.dumps(net.spec.to_dict(), sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(spec)))
        fh.write(spec)
        fh.write(struct.pack("<Q", net.n_weights))
        fh.write(np.ascontiguousarray(net.weights, dtype="<f4").tobytes())


def load_network(path, dtype=np.float32) -> Network:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise WeightFileError(f"{path}: not a weight file")
    try:
        (n_spec,) = struct.unpack_from("<I", raw, 4)
        spec = NetworkSpec.from_dict(json.loads(raw[8:8 + n_spec]))
        (count,) = struct.unpack_from("<Q", raw, 8 + n_spec)
    except (struct.error, ValueError, TypeError) as exc:
        raise WeightFileError(f"{path}: bad header ({exc})") from exc
    payload = raw[16 + n_spec:]
    if len(payload) != 4 * count:
        raise WeightFileError(f"{path}: expected {count} weights, found {len(payload) // 4}")
    net = Network(spec, dtype)
    if count != net.n_weights:
        raise WeightFileError(f"{path}: {count} weights for a spec needing {net.n_weights}")
    net.set_weights(np.frombuffer(payload, dtype="<f4"))
    return net
