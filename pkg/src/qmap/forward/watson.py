"""Watson distribution on the sphere: concentration, moments, sampling, quadrature."""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy import integrate


def odi_to_kappa(odi):
    """Concentration from orientation dispersion index, ``1 / tan(odi * pi / 2)``.

    ``odi = 0`` maps to ``inf`` (perfectly aligned sticks).
    """
    odi = np.asarray(odi, dtype=float)
    if np.any((odi < 0) | (odi > 1)):
        raise ValueError("odi must lie in [0, 1]")
    with np.errstate(divide="ignore"):
        kappa = 1.0 / np.tan(odi * np.pi / 2)
    kappa = np.where(odi == 0, np.inf, np.maximum(kappa, 0.0))
    return kappa[()] if kappa.ndim == 0 else kappa


def _tau1_scalar(kappa: float) -> float:
    if np.isinf(kappa):
        return 1.0
    if kappa <= 1.0:
        # weights exp(kappa (t^2 - 1)) keep the integrand O(1)
        num = integrate.quad(lambda t: t * t * np.exp(kappa * (t * t - 1)), 0, 1,
                             epsabs=0, epsrel=1e-12)[0]
        den = integrate.quad(lambda t: np.exp(kappa * (t * t - 1)), 0, 1,
                             epsabs=0, epsrel=1e-12)[0]
        return num / den
    # t = 1 - s / kappa: the peak at t = 1 becomes an O(1)-wide decay in s
    def weight(s):
        return np.exp(s * (s / kappa - 2.0))

    num = integrate.quad(lambda s: (1 - s / kappa) ** 2 * weight(s), 0, kappa,
                         epsabs=0, epsrel=1e-12, limit=200, points=[1.0, 10.0])[0]
    den = integrate.quad(weight, 0, kappa, epsabs=0, epsrel=1e-12, limit=200,
                         points=[1.0, 10.0])[0]
    return num / den


def watson_tau1(kappa):
    """Second moment ``E[(mu . n)^2]`` of a Watson distribution with concentration ``kappa``.

    Evaluated by adaptive quadrature of
    ``int_0^1 t^2 exp(k t^2) dt / int_0^1 exp(k t^2) dt``.
    """
    kappa = np.asarray(kappa, dtype=float)
    if np.any(kappa < 0):
        raise ValueError("kappa must be non-negative")
    out = np.vectorize(_tau1_scalar, otypes=[float])(kappa)
    return out[()] if out.ndim == 0 else out


def orthonormal_frame(mu) -> np.ndarray:
    """Rows ``(a, b, mu)``: a right-handed orthonormal frame with ``mu`` as third axis."""
    mu = np.asarray(mu, dtype=float)
    mu = mu / np.linalg.norm(mu)
    helper = np.array([1.0, 0.0, 0.0]) if abs(mu[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    a = np.cross(mu, helper)
    a /= np.linalg.norm(a)
    b = np.cross(mu, a)
    return np.stack([a, b, mu])


def watson_sample(rng: np.random.Generator, mu, kappa: float, size: int | None = None) -> np.ndarray:
    """Draw unit vectors with density proportional to ``exp(kappa (mu . n)^2)``.

    ``|mu . n| = 1 - u`` is sampled by rejection from a truncated exponential
    envelope in ``u`` (rate ``kappa``), accepted with probability
    ``exp(-kappa u (1 - u))``; acceptance stays above 1/2 for any ``kappa``.
    The sign of ``mu . n`` and the azimuth are uniform.
    """
    if kappa < 0:
        raise ValueError("kappa must be non-negative")
    n = 1 if size is None else int(size)
    frame = orthonormal_frame(mu)
    if np.isinf(kappa):
        t = np.ones(n)
    else:
        t = np.empty(n)
        filled = 0
        while filled < n:
            m = max(2 * (n - filled), 16)
            v = rng.random(m)
            if kappa > 1e-12:
                # inverse CDF of Exp(kappa) truncated to [0, 1]
                u = -np.log1p(-v * -np.expm1(-kappa)) / kappa
            else:
                u = v
            keep = u[rng.random(m) < np.exp(-kappa * u * (1 - u))]
            take = min(len(keep), n - filled)
            t[filled:filled + take] = 1 - keep[:take]
            filled += take
    t = t * np.where(rng.random(n) < 0.5, -1.0, 1.0)
    phi = rng.uniform(0, 2 * np.pi, n)
    r = np.sqrt(np.clip(1 - t * t, 0, None))
    local = np.stack([r * np.cos(phi), r * np.sin(phi), t], axis=1)
    out = local @ frame
    return out[0] if size is None else out


MIN_QUADRATURE_ORDER = 8


@lru_cache(maxsize=512)
def _polar_nodes(kappa: float, order: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes ``t`` in [0, 1] and normalized Watson weights for the polar integral.

    Composite Gauss-Legendre on intervals graded geometrically toward t = 1,
    where the density concentrates for large ``kappa``.
    """
    x, w = np.polynomial.legendre.leggauss(order)
    if kappa <= 4.0:
        edges = [0.0, 1.0]
    else:
        # breakpoints in u = 1 - t at 1/kappa, 4/kappa, 16/kappa, ...
        edges_u = [0.0]
        step = 1.0 / kappa
        while step < 1.0:
            edges_u.append(step)
            step *= 4.0
        edges_u.append(1.0)
        edges = sorted(1.0 - np.array(edges_u))
    ts, ws = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        ts.append(0.5 * (hi - lo) * x + 0.5 * (hi + lo))
        ws.append(0.5 * (hi - lo) * w)
    t = np.concatenate(ts)
    wt = np.concatenate(ws) * np.exp(kappa * (t * t - 1.0))
    return t, wt / wt.sum()


def watson_average(kappa: float, order: int, fn) -> np.ndarray:
    """Average of ``fn(t, cos_phi)`` over a Watson distribution in its own frame.

    ``fn`` receives polar cosines ``t`` (shape ``(nt, 1)``) and azimuth cosines
    (shape ``(1, nphi)``) and must return something broadcastable to
    ``(..., nt, nphi)``. Uses antipodal symmetry, so ``fn`` must be even in n.
    """
    if order < MIN_QUADRATURE_ORDER:
        raise ValueError(f"quadrature order must be at least {MIN_QUADRATURE_ORDER}")
    if np.isinf(kappa):
        t = np.ones(1)
        wt = np.ones(1)
    else:
        t, wt = _polar_nodes(float(kappa), int(order))
    nphi = 2 * order
    cos_phi = np.cos((np.arange(nphi) + 0.5) * (np.pi / nphi))
    vals = fn(t[:, None], cos_phi[None, :])
    return np.tensordot(vals.mean(axis=-1), wt, axes=([-1], [0]))
