"""Training-set generation and the binary dataset container."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from qmap.fit.dti import fit_dti_lls, tensor_scalars
from qmap.forward.models import dti_signal
from qmap.forward.simulate import SimConfig, mc_simulate
from qmap.forward.truth import (DTI_B_RANGE, DTI_N_RANGE, NODDI_B_RANGES, NODDI_N_RANGES,
                                DtiGroundTruth, sample_dti_truth, sample_noddi_truth)
from qmap.qmatrix import QmatrixConfig, encode
from qmap.scheme import GradientScheme

MAGIC = b"QMAP"
VERSION = 1
MODEL_TAGS = {"dti": 1, "noddi": 2}
LABEL_NAMES = {"dti": ("FA", "MD", "AD", "RD"), "noddi": ("ICVF", "ISOVF", "ODI")}
# diffusivity labels are stored in 1e-3 mm^2/s so every label is O(1)
DIFFUSIVITY_UNIT = 1e-3
SNR_RANGE = (30.0, 100.0)
# header: magic, version, model tag, n_samples, q_n, channels, label_dim
_HEADER = struct.Struct("<4sIBIIII")


class DatasetError(ValueError):
    """Bad dataset request or malformed dataset file."""


def dti_label(truth: DtiGroundTruth, scheme: GradientScheme) -> np.ndarray:
    """FA, MD, AD, RD from the log-linear fit of noise-free signals."""
    clean = dti_signal(truth, scheme.bvals, scheme.bvecs)
    s = tensor_scalars(fit_dti_lls(clean, scheme).D)
    return np.array([s.fa, s.md / DIFFUSIVITY_UNIT, s.ad / DIFFUSIVITY_UNIT, s.rd / DIFFUSIVITY_UNIT])


def scalars_to_physical(labels: np.ndarray, model: str) -> np.ndarray:
    """Undo the training unit of diffusivity columns (back to mm^2/s)."""
    out = np.array(labels, dtype=float)
    if model == "dti":
        out[..., 1:] *= DIFFUSIVITY_UNIT
    return out


@dataclass(frozen=True, eq=False)
class SimulatedSamples:
    """Per-sample schemes, noisy normalized signals and labels."""

    model: str
    schemes: list
    signals: list
    labels: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.schemes)


def simulate_samples(model: str, n_samples: int, cfg: SimConfig | None = None, seed: int = 0,
                     snr_range=SNR_RANGE, engine: str = "moment",
                     scheme: GradientScheme | None = None) -> SimulatedSamples:
    """Draw ``n_samples`` truths, simulate their noisy signals and compute labels.

    Each sample owns an RNG stream spawned from ``seed``. The SNR is drawn
    per sample from ``snr_range`` (``None`` for noise-free). A fixed
    ``scheme`` replaces the randomly drawn acquisition.
    """
    if model not in MODEL_TAGS:
        raise DatasetError(f"unknown model {model!r}")
    if n_samples < 1:
        raise DatasetError("n_samples must be at least 1")
    cfg = cfg or SimConfig.for_model(model)
    schemes, signals, labels = [], [], []
    for child in np.random.SeedSequence(seed).spawn(n_samples):
        rng = np.random.default_rng(child)
        if model == "dti":
            truth, drawn = sample_dti_truth(rng)
        else:
            truth, drawn = sample_noddi_truth(rng)
        acq = scheme if scheme is not None else drawn
        snr = None if snr_range is None else float(rng.uniform(*snr_range))
        signals.append(mc_simulate(truth, acq, cfg.replace(snr=snr), rng, engine))
        schemes.append(acq)
        if model == "dti":
            labels.append(dti_label(truth, acq))
        else:
            labels.append(np.array([truth.icvf, truth.isovf, truth.odi]))
    meta = {
        "model": model, "seed": seed, "n_samples": n_samples, "engine": engine,
        "snr_range": None if snr_range is None else list(snr_range),
        "sim": cfg.to_dict(),
        "priors": ({"d_max": 3.5e-3, "b_range": list(DTI_B_RANGE), "n_range": list(DTI_N_RANGE)}
                   if model == "dti" else
                   {"b_ranges": [list(r) for r in NODDI_B_RANGES],
                    "n_ranges": [list(r) for r in NODDI_N_RANGES]}),
        "fixed_scheme": scheme is not None,
    }
    return SimulatedSamples(model, schemes, signals, np.array(labels), meta)


def encode_samples(samples: SimulatedSamples, q_cfg: QmatrixConfig) -> np.ndarray:
    """Stack of encoded Qmatrices, ``(N, q_n, q_n, channels)`` float32."""
    out = np.empty((len(samples),) + q_cfg.shape, dtype=np.float32)
    for i, (sch, sig) in enumerate(zip(samples.schemes, samples.signals)):
        out[i] = encode(sch, sig, q_cfg).data
    return out


def pad_signals(signals, width: int) -> np.ndarray:
    """Zero-pad each signal list to ``width`` entries; ``(N, width)`` float32."""
    out = np.zeros((len(signals), width), dtype=np.float32)
    for i, s in enumerate(signals):
        if len(s) > width:
            raise DatasetError(f"{len(s)} signals do not fit a width-{width} input")
        out[i, :len(s)] = s
    return out


@dataclass(frozen=True, eq=False)
class Dataset:
    """Network inputs and labels. ``q_n == 0`` marks padded raw-signal
    inputs (MLP baselines) of length ``channels``."""

    model: str
    inputs: np.ndarray
    labels: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.inputs) != len(self.labels):
            raise DatasetError("inputs and labels differ in length")
        if self.model not in MODEL_TAGS:
            raise DatasetError(f"unknown model {self.model!r}")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def q_n(self) -> int:
        return self.inputs.shape[1] if self.inputs.ndim == 4 else 0

    @property
    def channels(self) -> int:
        return self.inputs.shape[-1]

    def subset(self, idx) -> Dataset:
        return Dataset(self.model, self.inputs[idx], self.labels[idx], self.meta)


def generate_dataset(model: str, n_samples: int, cfg: SimConfig | None = None,
                     q_cfg: QmatrixConfig | None = None, seed: int = 0, path=None,
                     snr_range=SNR_RANGE, engine: str = "moment",
                     scheme: GradientScheme | None = None, pad_to: int | None = None) -> Dataset:
    """Simulate, encode and optionally write a dataset.

    Inputs are Qmatrices for ``q_cfg``; with ``pad_to`` they are instead raw
    signals zero-padded to that length.
    """
    samples = simulate_samples(model, n_samples, cfg, seed, snr_range, engine, scheme)
    meta = dict(samples.meta)
    if pad_to is not None:
        inputs = pad_signals(samples.signals, pad_to)
        meta["input"] = {"kind": "padded", "width": pad_to}
    else:
        q_cfg = q_cfg or QmatrixConfig.for_model(model)
        inputs = encode_samples(samples, q_cfg)
        meta["input"] = {"kind": "qmatrix", **q_cfg.to_dict()}
    ds = Dataset(model, inputs, samples.labels.astype(np.float32), meta)
    if path is not None:
        write_dataset(path, ds)
    return ds


def write_dataset(path, ds: Dataset) -> None:
    """Binary container plus a ``<path>.json`` sidecar with the metadata."""
    n = len(ds)
    header = _HEADER.pack(MAGIC, VERSION, MODEL_TAGS[ds.model], n, ds.q_n, ds.channels,
                          ds.labels.shape[1])
    rows = np.concatenate([ds.inputs.reshape(n, -1), ds.labels.reshape(n, -1)], axis=1)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(rows, dtype="<f4").tobytes())
    Path(str(path) + ".json").write_text(json.dumps(ds.meta, indent=2, sort_keys=True))


def read_dataset(path) -> Dataset:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise DatasetError(f"{path}: too short for a dataset header")
    magic, version, tag, n, q_n, channels, label_dim = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise DatasetError(f"{path}: not a dataset file (magic {magic!r})")
    if version != VERSION:
        raise DatasetError(f"{path}: unsupported version {version}")
    models = {v: k for k, v in MODEL_TAGS.items()}
    if tag not in models:
        raise DatasetError(f"{path}: unknown model tag {tag}")
    shape = (q_n, q_n, channels) if q_n else (channels,)
    width = int(np.prod(shape)) + label_dim
    payload = raw[_HEADER.size:]
    if len(payload) != n * width * 4:
        raise DatasetError(f"{path}: payload holds {len(payload)} bytes, expected {n * width * 4}")
    rows = np.frombuffer(payload, dtype="<f4").reshape(n, width)
    sidecar = Path(str(path) + ".json")
    meta = json.loads(sidecar.read_text()) if sidecar.exists() else {}
    return Dataset(models[tag], rows[:, :-label_dim].reshape((n,) + shape).astype(np.float32),
                   rows[:, -label_dim:].astype(np.float32), meta)
