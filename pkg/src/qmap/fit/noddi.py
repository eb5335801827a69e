"""Grid search plus coordinate-descent refinement for the NODDI model."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from qmap.fit.dti import FitError
from qmap.forward.models import DEFAULT_ORDER, extracellular_diffusivities, noddi_signal, stick_average
from qmap.forward.truth import D_ISO, D_PAR, NoddiGroundTruth, quasi_uniform_directions
from qmap.forward.watson import odi_to_kappa, watson_tau1
from qmap.scheme import GradientScheme, group_shells

# below this, a compartment contributes too little signal to pin its parameters
_NEGLIGIBLE = 1e-2


@dataclass(frozen=True)
class NoddiGridSpec:
    """Stage-one grid (points per fraction axis, orientation candidates) and
    stage-two refinement (sweeps, step shrink factor)."""

    n_points: int = 21
    n_orientations: int = 30
    sweeps: int = 50
    shrink: float = 0.5
    order: int = DEFAULT_ORDER

    def __post_init__(self):
        if self.n_points < 2 or self.n_orientations < 1:
            raise ValueError("grid needs at least 2 points per axis and 1 orientation")
        if not 0 < self.shrink < 1:
            raise ValueError("shrink must lie in (0, 1)")


@dataclass(frozen=True, eq=False)
class NoddiFit:
    """Fitted parameters, residual sum of squares and refinement trace.

    ``history[k]`` is the objective after sweep ``k`` (``history[0]`` is the
    grid optimum). ``unconstrained`` names parameters the data cannot
    determine, e.g. ``icvf`` and ``odi`` in a pure free-water voxel.
    """

    icvf: float
    isovf: float
    odi: float
    mu: np.ndarray
    objective: float
    history: list = field(default_factory=list)
    unconstrained: frozenset = frozenset()

    def as_array(self) -> np.ndarray:
        return np.array([self.icvf, self.isovf, self.odi])


def _direction(theta: float, phi: float) -> np.ndarray:
    st = np.sin(theta)
    return np.array([st * np.cos(phi), st * np.sin(phi), np.cos(theta)])


def _angles(mu: np.ndarray) -> tuple[float, float]:
    return float(np.arccos(np.clip(mu[2], -1, 1))), float(np.arctan2(mu[1], mu[0]))


def _unconstrained(icvf: float, isovf: float, odi: float) -> frozenset:
    free = set()
    tissue = 1.0 - isovf
    if tissue < _NEGLIGIBLE:
        free.add("icvf")
    if tissue * icvf < _NEGLIGIBLE:
        free.add("odi")
    if tissue < _NEGLIGIBLE or icvf * tissue < _NEGLIGIBLE and odi > 1 - _NEGLIGIBLE:
        free.add("mu")
    return frozenset(free)


class NoddiFitter:
    """Per-scheme fitter; the grid signal tables are built once and reused
    for every voxel."""

    def __init__(self, scheme: GradientScheme, spec: NoddiGridSpec | None = None,
                 d_par: float = D_PAR, d_iso: float = D_ISO):
        if len(group_shells(scheme)) < 2:
            raise FitError("NODDI needs at least two distinct non-zero b-values; "
                           "a single shell leaves the model unidentifiable")
        self.scheme = scheme
        self.spec = spec or NoddiGridSpec()
        self.d_par, self.d_iso = d_par, d_iso
        n = self.spec.n_points
        self.fractions = np.linspace(0.0, 1.0, n)
        self.orientations = quasi_uniform_directions(self.spec.n_orientations)
        b, g = scheme.bvals, scheme.bvecs
        cos_mu = self.orientations @ g.T                     # (J, K)
        kappas = odi_to_kappa(self.fractions)
        tau1 = watson_tau1(kappas)
        self.a_iso = np.exp(-b * d_iso)                      # (K,)
        self.a_ic = np.stack([stick_average(float(k), b, cos_mu, d_par, self.spec.order)
                              for k in kappas])              # (O, J, K)
        axial, radial = extracellular_diffusivities(self.fractions[:, None], tau1[None, :], d_par)
        c2 = (cos_mu * cos_mu)[None, None]                   # (1, 1, J, K)
        self.a_ec = np.exp(-b * (radial[..., None, None]
                                 + (axial - radial)[..., None, None] * c2))  # (I, O, J, K)

    def _grid_search(self, y: np.ndarray) -> tuple[float, float, float, np.ndarray, float]:
        f = self.fractions
        u = self.a_iso - y                                   # (K,)
        uu = u @ u
        best = (np.inf, 0, 0, 0, 0)
        for j in range(len(self.orientations)):
            # tissue - y for every (icvf, odi)
            v = (f[:, None, None] * self.a_ic[None, :, j]
                 + (1 - f[:, None, None]) * self.a_ec[:, :, j]) - y
            uv = v @ u
            vv = np.einsum("iok,iok->io", v, v)
            s = f[:, None, None]                             # isovf axis first
            sse = s * s * uu + 2 * s * (1 - s) * uv[None] + (1 - s) ** 2 * vv[None]
            k = int(np.argmin(sse))
            if sse.flat[k] < best[0]:
                si, ii, oi = np.unravel_index(k, sse.shape)
                best = (float(sse.flat[k]), ii, si, oi, j)
        sse, ii, si, oi, j = best
        return f[ii], f[si], f[oi], self.orientations[j], sse

    def objective(self, icvf, isovf, odi, mu, y) -> float:
        truth = NoddiGroundTruth(icvf, isovf, odi, mu, self.d_par, self.d_iso)
        r = noddi_signal(truth, self.scheme.bvals, self.scheme.bvecs, self.spec.order) - y
        return float(r @ r)

    def fit(self, signals) -> NoddiFit:
        """Fit one voxel's normalized DW signals (length ``len(scheme)``)."""
        y = np.asarray(signals, dtype=float)
        if y.shape != (len(self.scheme),):
            raise FitError(f"expected {len(self.scheme)} signals, got shape {y.shape}")
        icvf, isovf, odi, mu, _ = self._grid_search(y)
        theta, phi = _angles(mu)
        x = np.array([icvf, isovf, odi, theta, phi])
        lower = np.array([0.0, 0.0, 0.0, -np.inf, -np.inf])
        upper = np.array([1.0, 1.0, 1.0, np.inf, np.inf])

        def cost(p):
            return self.objective(p[0], p[1], p[2], _direction(p[3], p[4]), y)

        current = cost(x)
        history = [current]
        grid_step = 1.0 / (self.spec.n_points - 1)
        steps = np.array([grid_step, grid_step, grid_step, 0.25, 0.25])
        cap = np.array([0.25, 0.25, 0.25, 1.0, 1.0])
        for _ in range(self.spec.sweeps):
            for i in range(5):
                moved = False
                for sign in (1.0, -1.0):
                    trial = x.copy()
                    trial[i] = np.clip(x[i] + sign * steps[i], lower[i], upper[i])
                    if trial[i] == x[i]:
                        continue
                    c = cost(trial)
                    if c < current:
                        x, current, moved = trial, c, True
                        break
                # grow along a coordinate that keeps paying off, shrink otherwise
                steps[i] = min(steps[i] / self.spec.shrink, cap[i]) if moved else steps[i] * self.spec.shrink
            history.append(current)
        mu = _direction(x[3], x[4])
        if mu[2] < 0:
            mu = -mu
        return NoddiFit(float(x[0]), float(x[1]), float(x[2]), mu, current, history,
                        _unconstrained(x[0], x[1], x[2]))

    def fit_many(self, signals) -> np.ndarray:
        """``(..., 3)`` array of (icvf, isovf, odi) for ``(..., K)`` signals."""
        signals = np.asarray(signals, dtype=float)
        flat = signals.reshape(-1, signals.shape[-1])
        out = np.array([self.fit(s).as_array() for s in flat]).reshape(signals.shape[:-1] + (3,))
        return out


def fit_noddi(signals, scheme: GradientScheme, spec: NoddiGridSpec | None = None) -> NoddiFit:
    """Fit icvf, isovf, odi and the mean orientation to one voxel.

    A coarse grid over the three fractions and a set of orientation
    candidates picks the starting cell; coordinate descent with a shrinking
    step then minimizes the squared signal residual. Deterministic.
    """
    return NoddiFitter(scheme, spec).fit(signals)
