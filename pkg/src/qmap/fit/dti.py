"""Log-linear least-squares tensor fitting and the scalar maps derived from it."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from qmap.scheme import GradientScheme, condition_number, dti_design


class FitError(ValueError):
    """Data or acquisition the fitter cannot handle."""


@dataclass(frozen=True, eq=False)
class DtiTensorFit:
    """Fitted tensor(s) ``D`` (``(..., 3, 3)``, mm^2/s) and log-signal RMSE."""

    D: np.ndarray
    residual: np.ndarray


@dataclass(frozen=True, eq=False)
class DtiScalars:
    fa: np.ndarray
    md: np.ndarray
    ad: np.ndarray
    rd: np.ndarray

    NAMES = ("FA", "MD", "AD", "RD")

    def stack(self) -> np.ndarray:
        """``(..., 4)`` array in FA, MD, AD, RD order."""
        return np.stack([self.fa, self.md, self.ad, self.rd], axis=-1)


def tensor_from_elements(e: np.ndarray) -> np.ndarray:
    """(Dxx, Dyy, Dzz, Dxy, Dxz, Dyz) -> symmetric 3x3."""
    e = np.asarray(e)
    D = np.empty(e.shape[:-1] + (3, 3), dtype=e.dtype)
    D[..., 0, 0], D[..., 1, 1], D[..., 2, 2] = e[..., 0], e[..., 1], e[..., 2]
    D[..., 0, 1] = D[..., 1, 0] = e[..., 3]
    D[..., 0, 2] = D[..., 2, 0] = e[..., 4]
    D[..., 1, 2] = D[..., 2, 1] = e[..., 5]
    return D


def fit_dti_lls(signals, scheme: GradientScheme) -> DtiTensorFit:
    """Solve ``-ln S_i = b_i g_i^T D g_i`` for the six tensor elements.

    ``signals`` are normalized (S/S0), shape ``(..., n_dw)``. All must be
    positive. Ordinary least squares; one pseudo-inverse serves every voxel.
    """
    signals = np.asarray(signals, dtype=float)
    if signals.shape[-1] != len(scheme):
        raise FitError(f"{signals.shape[-1]} signals for a {len(scheme)}-entry scheme")
    if len(scheme) < 6:
        raise FitError("tensor fitting needs at least 6 diffusion-weighted signals")
    if np.any(signals <= 0):
        raise FitError("non-positive signal: the log-linear model is undefined")
    if not np.isfinite(condition_number(scheme)):
        raise FitError("singular design matrix: gradient directions do not span the "
                       "six tensor elements (degenerate scheme)")
    X = scheme.bvals[:, None] * dti_design(scheme.bvecs)
    y = -np.log(signals)
    coef, *_ = np.linalg.lstsq(X, y.reshape(-1, len(scheme)).T, rcond=None)
    coef = coef.T.reshape(signals.shape[:-1] + (6,))
    resid = y - coef @ X.T
    return DtiTensorFit(tensor_from_elements(coef), np.sqrt(np.mean(resid**2, axis=-1)))


def eig_sym3(D) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues sorted descending and matching eigenvectors (columns)."""
    D = np.asarray(D, dtype=float)
    D = 0.5 * (D + np.swapaxes(D, -1, -2))
    evals, evecs = np.linalg.eigh(D)
    return evals[..., ::-1], evecs[..., ::-1]


def dti_scalars(l1, l2, l3) -> DtiScalars:
    """FA, MD, AD and RD from eigenvalues sorted descending.

    Negative eigenvalues (noise) are clipped to zero first; FA is zero for
    an all-zero tensor.
    """
    lam = np.clip(np.stack(np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (l1, l2, l3)))),
                  0.0, None)
    md = lam.mean(axis=0)
    norm = np.sqrt(np.sum(lam**2, axis=0))
    spread = np.sqrt(np.sum((lam - md) ** 2, axis=0))
    with np.errstate(invalid="ignore", divide="ignore"):
        fa = np.where(norm > 0, np.sqrt(1.5) * spread / np.where(norm > 0, norm, 1.0), 0.0)
    return DtiScalars(np.clip(fa, 0.0, 1.0), md, lam[0], 0.5 * (lam[1] + lam[2]))


def tensor_scalars(D) -> DtiScalars:
    evals, _ = eig_sym3(D)
    return dti_scalars(evals[..., 0], evals[..., 1], evals[..., 2])


def dti_maps(signals, scheme: GradientScheme, floor: float = 1e-6) -> DtiScalars:
    """Fit every voxel and return its scalar maps; signals are floored at
    ``floor`` so isolated noise dropouts do not abort a whole volume."""
    signals = np.maximum(np.asarray(signals, dtype=float), floor)
    return tensor_scalars(fit_dti_lls(signals, scheme).D)
