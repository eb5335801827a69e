"""Ground-truth tissue parameters and the priors used to draw training samples."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from qmap.scheme import GradientScheme

D_PAR = 1.7e-3  # mm^2/s, intra-neurite parallel diffusivity
D_ISO = 3.0e-3  # mm^2/s, free water
D_MAX = 3.5e-3  # mm^2/s, upper bound of the DTI prior

DTI_B_RANGE = (600.0, 1300.0)
DTI_N_RANGE = (30, 80)
NODDI_B_RANGES = ((200.0, 400.0), (500.0, 900.0), (1700.0, 2300.0))
NODDI_N_RANGES = ((5, 10), (25, 50), (50, 100))


@dataclass(frozen=True, eq=False)
class DtiGroundTruth:
    """Eigenvalues ``d = (d1, d2, d3)`` in mm^2/s and eigenvectors as the
    columns of ``evecs``. Only ``d1`` is guaranteed to be the largest."""

    d: np.ndarray
    evecs: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.d, dtype=float)
        e = np.asarray(self.evecs, dtype=float)
        if d.shape != (3,) or e.shape != (3, 3):
            raise ValueError("expected 3 eigenvalues and a 3x3 eigenvector matrix")
        if np.any(d < 0) or d[0] > D_MAX or d[1] > d[0] or d[2] > d[0]:
            raise ValueError(f"eigenvalues {d} violate 0 <= d2, d3 <= d1 <= {D_MAX}")
        if not np.allclose(e.T @ e, np.eye(3), atol=1e-6):
            raise ValueError("eigenvectors are not orthonormal")
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "evecs", e)

    def tensor(self) -> np.ndarray:
        return (self.evecs * self.d) @ self.evecs.T


@dataclass(frozen=True, eq=False)
class NoddiGroundTruth:
    """Nested volume fractions: ``isovf`` of the voxel is free water and
    ``icvf`` of the remainder is intra-neurite."""

    icvf: float
    isovf: float
    odi: float
    mu: np.ndarray
    d_par: float = D_PAR
    d_iso: float = D_ISO

    def __post_init__(self):
        for name in ("icvf", "isovf", "odi"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")
        mu = np.asarray(self.mu, dtype=float)
        if abs(np.linalg.norm(mu) - 1) > 1e-6:
            raise ValueError("mu must be a unit vector")
        object.__setattr__(self, "mu", mu)

    @property
    def fractions(self) -> tuple[float, float, float]:
        """(intra-neurite, extra-neurite, free water) fractions of the voxel."""
        ic = (1 - self.isovf) * self.icvf
        return ic, (1 - self.isovf) - ic, self.isovf


def random_unit_vectors(rng: np.random.Generator, n: int) -> np.ndarray:
    v = rng.standard_normal((n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    return Rotation.random(random_state=rng).as_matrix()


def quasi_uniform_directions(n: int, rng: np.random.Generator | None = None) -> np.ndarray:
    """``n`` directions spread evenly over a hemisphere (golden-angle spiral).

    With ``rng``, the set is randomly rotated and a random fraction (up to
    one half) of the directions is flipped to the opposite hemisphere; real
    protocols use both conventions and the Qmatrix does not mirror points.
    """
    i = np.arange(n) + 0.5
    z = i / n
    phi = i * np.pi * (3.0 - np.sqrt(5.0))
    r = np.sqrt(1 - z * z)
    dirs = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    if rng is None:
        return dirs
    dirs = dirs @ random_rotation(rng).T
    flip = rng.random(n) < rng.uniform(0.0, 0.5)
    dirs[flip] *= -1
    return dirs


def sample_dti_truth(rng: np.random.Generator, b_range=DTI_B_RANGE,
                     n_range=DTI_N_RANGE) -> tuple[DtiGroundTruth, GradientScheme]:
    """Draw a tensor from the DTI prior and a single-shell acquisition.

    ``d1 ~ U(0, 3.5e-3)``, ``d2, d3 ~ U(0, d1)``, random orientation; one
    b-value from ``b_range`` and an integer direction count from ``n_range``.
    """
    d1 = rng.uniform(0.0, D_MAX)
    d2, d3 = rng.uniform(0.0, d1, size=2)
    truth = DtiGroundTruth(np.array([d1, d2, d3]), random_rotation(rng))
    b = rng.uniform(*b_range)
    n = int(rng.integers(n_range[0], n_range[1] + 1))
    scheme = GradientScheme(np.full(n, b), quasi_uniform_directions(n, rng), n_b0=1)
    return truth, scheme


def sample_noddi_truth(rng: np.random.Generator, b_ranges=NODDI_B_RANGES,
                       n_ranges=NODDI_N_RANGES) -> tuple[NoddiGroundTruth, GradientScheme]:
    """Draw NODDI parameters uniformly and a three-shell acquisition."""
    icvf, isovf, odi = rng.uniform(0.0, 1.0, size=3)
    mu = random_unit_vectors(rng, 1)[0]
    truth = NoddiGroundTruth(float(icvf), float(isovf), float(odi), mu)
    bvals, bvecs = [], []
    for (lo, hi), (nlo, nhi) in zip(b_ranges, n_ranges):
        n = int(rng.integers(nlo, nhi + 1))
        bvals.append(np.full(n, rng.uniform(lo, hi)))
        bvecs.append(quasi_uniform_directions(n, rng))
    scheme = GradientScheme(np.concatenate(bvals), np.concatenate(bvecs), n_b0=1)
    return truth, scheme
