"""Analytic signal models (normalized, S/S0)."""

from __future__ import annotations

import numpy as np

from qmap.forward.truth import DtiGroundTruth, NoddiGroundTruth
from qmap.forward.watson import odi_to_kappa, watson_average, watson_tau1

DEFAULT_ORDER = 16


def _as_bg(b, g):
    b = np.asarray(b, dtype=float)
    g = np.asarray(g, dtype=float)
    if np.any(b < 0):
        raise ValueError("b-values must be non-negative")
    return b, g


def dti_signal(truth: DtiGroundTruth | np.ndarray, b, g):
    """``exp(-b g^T D g)`` for a tensor (or ground truth) and broadcastable b, g."""
    b, g = _as_bg(b, g)
    D = truth.tensor() if isinstance(truth, DtiGroundTruth) else np.asarray(truth, dtype=float)
    adc = np.einsum("...i,ij,...j->...", g, D, g)
    return np.exp(-b * adc)


def extracellular_diffusivities(icvf: float, tau1: float, d_par: float) -> tuple[float, float]:
    """(axial, radial) eigenvalues of the Watson-dispersed hindered tensor.

    Tortuosity sets ``d_perp = d_par (1 - icvf)``; dispersion then mixes the
    axial and radial diffusivities with the second Watson moment.
    """
    d_perp = d_par * (1.0 - icvf)
    axial = d_perp + (d_par - d_perp) * tau1
    radial = d_perp + (d_par - d_perp) * (1.0 - tau1) / 2.0
    return axial, radial


def stick_average(kappa: float, b, cos_mu, d_par: float, order: int = DEFAULT_ORDER):
    """Watson-weighted average of stick signals ``exp(-b d_par (g . n)^2)``.

    ``cos_mu`` is ``g . mu`` per measurement; b and cos_mu broadcast together.
    """
    b = np.asarray(b, dtype=float)
    c = np.asarray(cos_mu, dtype=float)
    b, c = np.broadcast_arrays(b, c)
    s = np.sqrt(np.clip(1.0 - c * c, 0.0, None))
    bd = (b * d_par)[..., None, None]
    c = c[..., None, None]
    s = s[..., None, None]

    def integrand(t, cos_phi):
        proj = t * c + np.sqrt(np.clip(1 - t * t, 0, None)) * s * cos_phi
        return np.exp(-bd * proj * proj)

    return watson_average(kappa, order, integrand)


def noddi_signal(truth: NoddiGroundTruth, b, g, order: int = DEFAULT_ORDER):
    """Three-compartment NODDI signal for measurements ``(b, g)``.

    Intra-neurite: Watson-dispersed sticks integrated by spherical quadrature.
    Extra-neurite: axially symmetric tensor along ``mu``.
    Free water: isotropic ``d_iso``.
    """
    b, g = _as_bg(b, g)
    kappa = float(odi_to_kappa(truth.odi))
    cos_mu = g @ truth.mu
    a_ic = stick_average(kappa, b, cos_mu, truth.d_par, order)
    axial, radial = extracellular_diffusivities(truth.icvf, float(watson_tau1(kappa)), truth.d_par)
    a_ec = np.exp(-b * (radial + (axial - radial) * cos_mu * cos_mu))
    a_iso = np.exp(-b * truth.d_iso)
    tissue = truth.icvf * a_ic + (1 - truth.icvf) * a_ec
    return truth.isovf * a_iso + (1 - truth.isovf) * tissue
