"""Qmatrix encoding: normalized q-space signals quantized onto a fixed grid.

A signal's gradient direction and b-value are represented only by where it
lands in the grid, so any acquisition scheme yields the same input shape.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from qmap.scheme import GradientScheme, ShellPartition, group_shells, normalize_qpoints

# (first axis, second axis) of the xy, yz and xz projections
PLANES = ((0, 1), (1, 2), (0, 2))

B_NORM = {"dti": 1300.0, "noddi": 2300.0}


class QmatrixShapeError(ValueError):
    """Encoding would not match the channel layout the caller expects."""


@dataclass(frozen=True)
class QmatrixConfig:
    """Grid size, 2d/3d variant and q-space normalization b-value.

    ``per_shell`` projects every shell separately (three channels each);
    ``n_shells`` pins the expected shell count for per-shell encoding.
    """

    q_n: int = 20
    variant: str = "2d"
    b_norm: float = 1300.0
    per_shell: bool = False
    n_shells: int | None = None
    shell_tolerance: float = 50.0

    def __post_init__(self):
        if self.q_n < 1:
            raise ValueError("q_n must be positive")
        if self.variant not in ("2d", "3d"):
            raise ValueError("variant must be '2d' or '3d'")
        if self.b_norm <= 0:
            raise ValueError("b_norm must be positive")
        if self.per_shell and self.variant != "2d":
            raise ValueError("per-shell projection is only defined for the 2d variant")

    @property
    def channels(self) -> int:
        """Trailing axis length of the encoded array."""
        if self.variant == "3d":
            return self.q_n
        return 3 * (self.n_shells or 3) if self.per_shell else 3

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.q_n, self.q_n, self.channels)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def for_model(cls, model: str, **kw) -> QmatrixConfig:
        """Defaults per model: DTI single projection, NODDI three shells projected separately."""
        kw.setdefault("b_norm", B_NORM[model])
        if model == "noddi" and kw.get("variant", "2d") == "2d":
            kw.setdefault("per_shell", True)
            kw.setdefault("n_shells", 3)
        return cls(**kw)


@dataclass(frozen=True, eq=False)
class Qmatrix:
    """Bin means (``data``) and the number of signals in each bin (``counts``)."""

    data: np.ndarray
    counts: np.ndarray


def bin_index(coord, q_n: int):
    """Grid cell of a normalized coordinate: ``floor((c + 1) / 2 * q_n)``,
    with ``c = +1`` clamped into the last cell."""
    c = np.asarray(coord, dtype=float)
    if np.any(np.abs(c) > 1 + 1e-9):
        raise ValueError(f"coordinate outside [-1, 1]: {c[np.abs(c) > 1 + 1e-9].ravel()[:3]}")
    idx = np.floor((np.clip(c, -1.0, 1.0) + 1.0) / 2.0 * q_n).astype(int)
    idx = np.clip(idx, 0, q_n - 1)
    return idx[()] if idx.ndim == 0 else idx


def _bin_means(flat_bins: np.ndarray, signals: np.ndarray, size: int) -> tuple[np.ndarray, np.ndarray]:
    """Mean of ``signals[..., k]`` per ``flat_bins[k]`` over ``size`` bins.

    Values are summed in (bin, value) order so the result does not depend
    on the input order. ``signals`` may carry leading batch axes.
    """
    batch = signals.shape[:-1]
    data = np.zeros(batch + (size,))
    counts = np.bincount(flat_bins, minlength=size)
    if flat_bins.size == 0:
        return data, counts
    keys = np.broadcast_to(flat_bins, signals.shape)
    order = np.lexsort((signals, keys), axis=-1)
    ordered = np.take_along_axis(signals, order, axis=-1)
    sorted_bins = np.sort(flat_bins)
    starts = np.flatnonzero(np.r_[True, np.diff(sorted_bins) != 0])
    occupied = sorted_bins[starts]
    sums = np.add.reduceat(ordered, starts, axis=-1)
    data[..., occupied] = sums / counts[occupied]
    return data, counts


def _check(qpoints, signals):
    qpoints = np.asarray(qpoints, dtype=float).reshape(-1, 3)
    signals = np.asarray(signals, dtype=float)
    if signals.shape[-1] != len(qpoints):
        raise ValueError(f"{len(qpoints)} q-points but {signals.shape[-1]} signals")
    return qpoints, signals


def encode_2d(qpoints, signals, cfg: QmatrixConfig, shells: ShellPartition | None = None) -> Qmatrix:
    """Project q-points onto the xy, yz and xz planes and average signals per bin.

    Channels are ``[xy, yz, xz]``; with ``cfg.per_shell`` each shell (ascending
    b) contributes its own three channels. ``signals`` may have leading batch
    axes sharing the same q-points.
    """
    qpoints, signals = _check(qpoints, signals)
    q = cfg.q_n
    if cfg.per_shell:
        if shells is None:
            raise ValueError("per-shell encoding needs a shell partition")
        if cfg.n_shells is not None and len(shells) != cfg.n_shells:
            raise QmatrixShapeError(
                f"expected {cfg.n_shells} shells ({3 * cfg.n_shells} channels), found {len(shells)}")
        groups = [s.indices for s in shells.shells]
    else:
        groups = [np.arange(len(qpoints))]
    idx = bin_index(qpoints, q) if len(qpoints) else np.zeros((0, 3), dtype=int)
    batch = signals.shape[:-1]
    data = np.zeros(batch + (q, q, 3 * len(groups)))
    counts = np.zeros((q, q, 3 * len(groups)), dtype=int)
    for gi, members in enumerate(groups):
        for pi, (a, b) in enumerate(PLANES):
            flat = idx[members, a] * q + idx[members, b]
            means, cnt = _bin_means(flat, signals[..., members], q * q)
            ch = 3 * gi + pi
            data[..., ch] = means.reshape(batch + (q, q))
            counts[..., ch] = cnt.reshape(q, q)
    return Qmatrix(data, counts)


def encode_3d(qpoints, signals, cfg: QmatrixConfig) -> Qmatrix:
    """Average signals per cell of a ``q_n^3`` grid over normalized q-space."""
    qpoints, signals = _check(qpoints, signals)
    q = cfg.q_n
    idx = bin_index(qpoints, q) if len(qpoints) else np.zeros((0, 3), dtype=int)
    flat = (idx[:, 0] * q + idx[:, 1]) * q + idx[:, 2]
    means, cnt = _bin_means(flat, signals, q**3)
    return Qmatrix(means.reshape(signals.shape[:-1] + (q, q, q)), cnt.reshape(q, q, q))


def encode(scheme: GradientScheme, signals, cfg: QmatrixConfig) -> Qmatrix:
    """Normalize the scheme into q-space and encode ``signals`` (optionally batched)."""
    qpoints = normalize_qpoints(scheme, cfg.b_norm)
    if cfg.variant == "3d":
        return encode_3d(qpoints, signals, cfg)
    shells = group_shells(scheme, cfg.shell_tolerance) if cfg.per_shell else None
    return encode_2d(qpoints, signals, cfg, shells)
