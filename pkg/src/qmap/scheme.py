"""Gradient schemes: parsing, q-space normalization, shells and direction subsets."""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

BUILTIN_SCHEMES = ("dti_a", "dti_b", "noddi_a", "noddi_b")


class SchemeError(ValueError):
    """Malformed scheme text or an invalid scheme operation."""


@dataclass(frozen=True, eq=False)
class GradientScheme:
    """Diffusion-weighted acquisitions plus the number of b=0 images.

    ``bvals`` (s/mm^2) and ``bvecs`` (unit rows) hold only the b > 0 entries,
    in acquisition order.
    """

    bvals: np.ndarray
    bvecs: np.ndarray
    n_b0: int = 0

    def __post_init__(self):
        bvals = np.asarray(self.bvals, dtype=float).reshape(-1)
        bvecs = np.asarray(self.bvecs, dtype=float).reshape(-1, 3)
        if len(bvals) == 0:
            raise SchemeError("scheme has no diffusion-weighted entries")
        if len(bvals) != len(bvecs):
            raise SchemeError("bvals and bvecs differ in length")
        if np.any(bvals <= 0):
            raise SchemeError("diffusion-weighted entries need b > 0")
        if np.any(np.abs(np.linalg.norm(bvecs, axis=1) - 1) > 1e-6):
            raise SchemeError("gradient directions must have unit length")
        if self.n_b0 < 0:
            raise SchemeError("n_b0 must be non-negative")
        bvals.flags.writeable = False
        bvecs.flags.writeable = False
        object.__setattr__(self, "bvals", bvals)
        object.__setattr__(self, "bvecs", bvecs)

    @classmethod
    def from_arrays(cls, bvals, bvecs, n_b0: int = 0) -> GradientScheme:
        """Build from raw arrays, renormalizing directions."""
        bvecs = np.asarray(bvecs, dtype=float).reshape(-1, 3)
        return cls(bvals, bvecs / np.linalg.norm(bvecs, axis=1, keepdims=True), n_b0)

    @classmethod
    def load(cls, path: str | Path) -> GradientScheme:
        return parse_scheme(Path(path).read_text(encoding="utf-8"))

    @classmethod
    def builtin(cls, name: str) -> GradientScheme:
        """One of the packaged acquisition tables (``dti_a``, ``dti_b``, ``noddi_a``, ``noddi_b``)."""
        if name not in BUILTIN_SCHEMES:
            raise SchemeError(f"unknown builtin scheme {name!r}; choose from {BUILTIN_SCHEMES}")
        text = resources.files("qmap.data").joinpath(f"{name}.txt").read_text(encoding="utf-8")
        return parse_scheme(text)

    def __len__(self) -> int:
        return len(self.bvals)

    def take(self, indices) -> GradientScheme:
        indices = np.asarray(indices, dtype=int)
        return GradientScheme(self.bvals[indices], self.bvecs[indices], self.n_b0)

    def to_text(self) -> str:
        lines = ["# b gx gy gz"] + ["0 0 0 0"] * self.n_b0
        lines += [f"{b:g} {g[0]:.6f} {g[1]:.6f} {g[2]:.6f}" for b, g in zip(self.bvals, self.bvecs)]
        return "\n".join(lines) + "\n"


def parse_scheme(text: str) -> GradientScheme:
    """Parse scheme-file text: one ``b gx gy gz`` row per acquisition.

    b=0 rows may give just ``0`` or a zero vector; ``#`` starts a comment.
    Directions are renormalized; row order is preserved.
    """
    bvals, bvecs, n_b0 = [], [], 0
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        try:
            values = [float(f) for f in fields]
        except ValueError:
            raise SchemeError(f"line {lineno}: non-numeric field in {raw.strip()!r}") from None
        b = values[0]
        if b < 0:
            raise SchemeError(f"line {lineno}: negative b-value {b:g}")
        if b == 0 and len(values) in (1, 4):
            n_b0 += 1
            continue
        if len(values) != 4:
            raise SchemeError(f"line {lineno}: expected 4 fields 'b gx gy gz', got {len(values)}")
        g = np.array(values[1:])
        norm = np.linalg.norm(g)
        if norm == 0:
            raise SchemeError(f"line {lineno}: zero-length gradient direction with b={b:g}")
        bvals.append(b)
        bvecs.append(g / norm)
    if not bvals:
        raise SchemeError("scheme has no diffusion-weighted rows")
    return GradientScheme(np.array(bvals), np.array(bvecs), n_b0)


def normalize_qpoints(scheme: GradientScheme, b_norm: float) -> np.ndarray:
    """Map each DW entry to normalized q-space: ``sqrt(b / b_norm) * g``.

    Returns an ``(n, 3)`` array aligned with the scheme entries (row i is the
    q-point of signal i). b=0 images never appear.
    """
    if b_norm <= 0:
        raise SchemeError("b_norm must be positive")
    if np.any(scheme.bvals > b_norm):
        raise SchemeError(
            f"b-value {scheme.bvals.max():g} exceeds the normalization b-value {b_norm:g}")
    return np.sqrt(scheme.bvals / b_norm)[:, None] * scheme.bvecs


@dataclass(frozen=True)
class Shell:
    b: float
    indices: np.ndarray


@dataclass(frozen=True)
class ShellPartition:
    shells: list[Shell] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.shells)

    @property
    def bvalues(self) -> np.ndarray:
        return np.array([s.b for s in self.shells])


def group_shells(scheme: GradientScheme, tolerance: float = 50.0) -> ShellPartition:
    """Single-linkage grouping of b-values; consecutive sorted values within
    ``tolerance`` share a shell whose representative is the member mean."""
    if tolerance < 0:
        raise SchemeError("tolerance must be non-negative")
    order = np.argsort(scheme.bvals, kind="stable")
    sorted_b = scheme.bvals[order]
    breaks = np.flatnonzero(np.diff(sorted_b) > tolerance) + 1
    shells = []
    for members in np.split(order, breaks):
        members = np.sort(members)
        shells.append(Shell(float(scheme.bvals[members].mean()), members))
    return ShellPartition(shells)


def dti_design(bvecs: np.ndarray) -> np.ndarray:
    """Rows ``(gx^2, gy^2, gz^2, 2gxgy, 2gxgz, 2gygz)``."""
    g = np.asarray(bvecs, dtype=float).reshape(-1, 3)
    x, y, z = g.T
    return np.stack([x * x, y * y, z * z, 2 * x * y, 2 * x * z, 2 * y * z], axis=1)


def condition_number(scheme: GradientScheme | np.ndarray) -> float:
    """Ratio of extreme singular values of the 6-column tensor design matrix.

    Rank-deficient designs give ``inf``.
    """
    bvecs = scheme.bvecs if isinstance(scheme, GradientScheme) else scheme
    design = dti_design(bvecs)
    if design.shape[0] < 6:
        raise SchemeError("condition number needs at least 6 directions")
    s = np.linalg.svd(design, compute_uv=False)
    if s[-1] <= s[0] * 1e-12:
        return float("inf")
    return float(s[0] / s[-1])


def select_subset(scheme: GradientScheme, k: int | Sequence[int], n_candidates: int = 500,
                  seed=None, tolerance: float = 50.0) -> GradientScheme:
    """Pick ``k`` directions per shell, keeping the random candidate whose
    combined scheme has the lowest condition number.

    ``k`` is either one count for every shell or a per-shell sequence
    (ascending b). Selected entries keep their original order.
    """
    if n_candidates < 1:
        raise SchemeError("n_candidates must be at least 1")
    shells = group_shells(scheme, tolerance).shells
    counts = [int(k)] * len(shells) if np.ndim(k) == 0 else [int(c) for c in k]
    if len(counts) != len(shells):
        raise SchemeError(f"got {len(counts)} per-shell counts for {len(shells)} shells")
    for shell, c in zip(shells, counts):
        if c > len(shell.indices) or c < 1:
            raise SchemeError(f"cannot take {c} directions from a {len(shell.indices)}-direction "
                              f"shell at b={shell.b:g}")
    if all(c == len(s.indices) for s, c in zip(shells, counts)):
        return scheme

    rng = np.random.default_rng(seed)
    best, best_cond = None, np.inf
    for _ in range(n_candidates):
        picked = np.concatenate([rng.choice(s.indices, size=c, replace=False)
                                 for s, c in zip(shells, counts)])
        cond = condition_number(scheme.bvecs[picked])
        if best is None or cond < best_cond:
            best, best_cond = picked, cond
    return scheme.take(np.sort(best))
