"""Binary volume files: a JSON header followed by little-endian float32 data.

Layout: ``u64`` header length, UTF-8 JSON ``{"shape", "names", "model"}``,
then the array in C order. The last axis of ``shape`` indexes ``names``
(parameters for maps, measurements for signal volumes).
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

_LEN = struct.Struct("<Q")


class VolumeFormatError(ValueError):
    """Malformed or truncated volume file."""


@dataclass(frozen=True, eq=False)
class Volume:
    data: np.ndarray
    names: tuple = ()
    model: str = ""
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        if self.names and data.shape[-1] != len(self.names):
            raise ValueError(f"{len(self.names)} names for trailing axis of length {data.shape[-1]}")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "names", tuple(self.names))

    def channel(self, name: str) -> np.ndarray:
        return self.data[..., self.names.index(name)]


def write_volume(path, volume: Volume) -> None:
    header = {"shape": list(volume.data.shape), "names": list(volume.names),
              "model": volume.model, **volume.extra}
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_LEN.pack(len(blob)))
        fh.write(blob)
        fh.write(np.ascontiguousarray(volume.data, dtype="<f4").tobytes())


def read_volume(path) -> Volume:
    raw = Path(path).read_bytes()
    if len(raw) < _LEN.size:
        raise VolumeFormatError(f"{path}: file too short for a header")
    (n,) = _LEN.unpack_from(raw)
    try:
        header = json.loads(raw[_LEN.size:_LEN.size + n])
        shape = tuple(int(s) for s in header.pop("shape"))
        names = header.pop("names")
        model = header.pop("model")
    except (ValueError, KeyError, TypeError) as exc:
        raise VolumeFormatError(f"{path}: bad header ({exc})") from exc
    payload = raw[_LEN.size + n:]
    expected = int(np.prod(shape)) * 4
    if len(payload) != expected:
        raise VolumeFormatError(f"{path}: expected {expected} data bytes, found {len(payload)}")
    data = np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float32)
    return Volume(data, names, model, header)


def write_csv(path, rows, names) -> None:
    """Flat sample list: one row per sample, one column per name."""
    rows = np.asarray(rows, dtype=float).reshape(-1, len(names))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        w.writerows([[repr(float(v)) for v in r] for r in rows])


def read_csv(path) -> tuple[np.ndarray, list[str]]:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        names = next(r)
        rows = [[float(v) for v in line] for line in r]
    return np.array(rows, dtype=float).reshape(-1, len(names)), names
