"""Monte-Carlo random-walk simulation of a pulsed-gradient spin-echo experiment."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from qmap.forward.truth import DtiGroundTruth, NoddiGroundTruth
from qmap.forward.watson import odi_to_kappa, orthonormal_frame, watson_sample, watson_tau1
from qmap.forward.models import extracellular_diffusivities
from qmap.scheme import GradientScheme

GAMMA_PROTON = 2.675e8  # rad s^-1 T^-1

_PHASE_CHUNK = 8192


class SimulationError(ValueError):
    """Invalid simulation configuration."""


@dataclass(frozen=True)
class SimConfig:
    """Sequence timing in milliseconds.

    The two gradient lobes (width ``delta_small``, separation ``delta_big``)
    sit symmetrically about TE/2; ``delta_big=None`` means TE/2.
    ``snr=None`` disables noise. ``n_b0`` noisy b=0 magnitudes are averaged
    for normalization.
    """

    n_protons: int = 10_000
    dt: float = 0.2
    te: float = 72.0
    delta_small: float = 20.0
    delta_big: float | None = None
    gamma: float = GAMMA_PROTON
    snr: float | None = None
    n_b0: int = 1

    def __post_init__(self):
        if self.dt <= 0:
            raise SimulationError("dt must be positive")
        if self.n_protons < 1:
            raise SimulationError("n_protons must be at least 1")
        if self.delta_small <= 0:
            raise SimulationError("gradient duration must be positive")
        if self.big_delta < self.delta_small:
            raise SimulationError("lobe separation must be at least the lobe duration")
        if self.delta_small + self.big_delta > self.te + 1e-9:
            raise SimulationError(
                f"delta ({self.delta_small} ms) + Delta ({self.big_delta} ms) exceeds TE ({self.te} ms)")
        if self.snr is not None and self.snr <= 0:
            raise SimulationError("snr must be positive")
        if self.n_b0 < 1:
            raise SimulationError("n_b0 must be at least 1")

    @property
    def big_delta(self) -> float:
        return self.te / 2 if self.delta_big is None else self.delta_big

    def replace(self, **changes) -> SimConfig:
        return SimConfig(**{**asdict(self), **changes})

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def for_model(cls, model: str, **kw) -> SimConfig:
        """Echo times of the two protocols: 72 ms for DTI, 95 ms for NODDI."""
        te = {"dti": 72.0, "noddi": 95.0}[model]
        return cls(te=te, **kw)


def gradient_amplitude(b, cfg: SimConfig):
    """Gradient strength (T/m) giving ``b`` (s/mm^2) for rectangular PGSE lobes:
    ``b = gamma^2 G^2 delta^2 (Delta - delta / 3)``."""
    delta = cfg.delta_small * 1e-3
    big = cfg.big_delta * 1e-3
    b_si = np.asarray(b, dtype=float) * 1e6
    return np.sqrt(b_si / (cfg.gamma**2 * delta**2 * (big - delta / 3)))


def effective_gradient(cfg: SimConfig) -> np.ndarray:
    """Signed fraction of each time step covered by a lobe.

    +1 during the first lobe and -1 during the second (the refocusing pulse
    inverts the phase accrued before it). Steps partially covered get the
    covered fraction, so the discrete waveform integrates exactly.
    """
    n_steps = int(round(cfg.te / cfg.dt))
    edges = np.arange(n_steps + 1) * cfg.dt
    start = (cfg.te - cfg.big_delta - cfg.delta_small) / 2
    w = np.zeros(n_steps)
    for sign, lo in ((1.0, start), (-1.0, start + cfg.big_delta)):
        hi = lo + cfg.delta_small
        overlap = np.clip(np.minimum(edges[1:], hi) - np.maximum(edges[:-1], lo), 0, None)
        w += sign * overlap / cfg.dt
    return w


def _dephasing_weights(cfg: SimConfig) -> np.ndarray:
    """Per-step weights on the active window (seconds) and their cumulative tail."""
    w = effective_gradient(cfg)
    active = np.flatnonzero(w)
    return w[active[0]:active[-1] + 1] * (cfg.dt * 1e-3)


@dataclass
class _Population:
    """Protons sharing one diffusion tensor, or sticks with per-proton axes."""

    count: int
    step_matrix: np.ndarray | None = None   # (3, 3): step = step_matrix @ z
    stick_axes: np.ndarray | None = None     # (count, 3)
    stick_sigma: float = 0.0


def _populations(truth, cfg: SimConfig, rng: np.random.Generator) -> list[_Population]:
    dt = cfg.dt * 1e-3
    mm2 = 1e-6  # mm^2/s -> m^2/s
    n = cfg.n_protons
    if isinstance(truth, DtiGroundTruth):
        scale = np.sqrt(2 * truth.d * mm2 * dt)
        return [_Population(n, truth.evecs * scale)]
    if isinstance(truth, NoddiGroundTruth):
        f_ic, _, f_iso = truth.fractions
        n_iso = int(round(n * f_iso))
        n_ic = min(int(round(n * f_ic)), n - n_iso)
        n_ec = n - n_iso - n_ic
        kappa = float(odi_to_kappa(truth.odi))
        axial, radial = extracellular_diffusivities(truth.icvf, float(watson_tau1(kappa)), truth.d_par)
        frame = orthonormal_frame(truth.mu)  # rows a, b, mu
        ec = frame.T * np.sqrt(2 * np.array([radial, radial, axial]) * mm2 * dt)
        pops = [
            _Population(n_iso, np.eye(3) * np.sqrt(2 * truth.d_iso * mm2 * dt)),
            _Population(n_ec, ec),
        ]
        if n_ic:
            pops.append(_Population(n_ic, stick_axes=watson_sample(rng, truth.mu, kappa, n_ic),
                                    stick_sigma=np.sqrt(2 * truth.d_par * mm2 * dt)))
        return [p for p in pops if p.count > 0]
    raise TypeError(f"unsupported ground truth {type(truth).__name__}")


def _moments_walk(pop: _Population, weights: np.ndarray, rng) -> np.ndarray:
    """Step every proton through the gradient window, accumulating
    ``sum_n w_n x_{n+1}`` (the dephasing moment, m*s)."""
    x = np.zeros((pop.count, 3))
    moment = np.zeros((pop.count, 3))
    for w in weights:
        if pop.stick_axes is None:
            x += rng.standard_normal((pop.count, 3)) @ pop.step_matrix.T
        else:
            x += (pop.stick_sigma * rng.standard_normal(pop.count))[:, None] * pop.stick_axes
        if w != 0.0:
            moment += w * x
    return moment


def _moments_direct(pop: _Population, weights: np.ndarray, rng) -> np.ndarray:
    """Draw the dephasing moment from its exact law under the same discrete walk.

    The moment is ``sum_j F_j xi_j`` with ``F_j`` the tail sums of the
    weights and independent Gaussian steps ``xi_j``, hence Gaussian with
    per-axis variance ``sum_j F_j^2`` times the step variance.
    """
    tail = np.cumsum(weights[::-1])[::-1]
    spread = np.sqrt(np.sum(tail * tail))
    if pop.stick_axes is None:
        return spread * rng.standard_normal((pop.count, 3)) @ pop.step_matrix.T
    return (spread * pop.stick_sigma * rng.standard_normal(pop.count))[:, None] * pop.stick_axes


ENGINES = {"walk": _moments_walk, "moment": _moments_direct}


def simulate_complex(truth, scheme: GradientScheme, cfg: SimConfig, rng: np.random.Generator,
                     engine: str = "walk") -> np.ndarray:
    """Noise-free complex ensemble average of ``exp(i phase)`` per DW entry."""
    if engine not in ENGINES:
        raise SimulationError(f"unknown engine {engine!r}; choose from {sorted(ENGINES)}")
    weights = _dephasing_weights(cfg)
    # phase_k = gamma G_k g_k . moment
    qvec = (cfg.gamma * gradient_amplitude(scheme.bvals, cfg))[:, None] * scheme.bvecs
    total = np.zeros(len(scheme), dtype=complex)
    # phases are evaluated in single precision (error ~1e-5 rad, far below
    # Monte-Carlo noise) and summed in double
    qvec32 = qvec.T.astype(np.float32)
    for pop in _populations(truth, cfg, rng):
        moment = ENGINES[engine](pop, weights, rng).astype(np.float32)
        for lo in range(0, pop.count, _PHASE_CHUNK):
            phase = moment[lo:lo + _PHASE_CHUNK] @ qvec32
            total += (np.cos(phase).sum(axis=0, dtype=np.float64)
                      + 1j * np.sin(phase).sum(axis=0, dtype=np.float64))
    return total / cfg.n_protons


def noisy_magnitude(values, snr: float | None, rng: np.random.Generator) -> np.ndarray:
    """``|S + n_re + i n_im|`` with ``n ~ N(0, 1/snr)`` on each axis (S0 = 1)."""
    values = np.asarray(values, dtype=complex)
    if snr is None:
        return np.abs(values)
    sigma = 1.0 / snr
    noise = rng.normal(0.0, sigma, values.shape) + 1j * rng.normal(0.0, sigma, values.shape)
    return np.abs(values + noise)


def mc_simulate(truth, scheme: GradientScheme, cfg: SimConfig, rng: np.random.Generator,
                engine: str = "walk") -> np.ndarray:
    """Normalized signals ``S / S0`` for each DW entry of ``scheme``.

    Protons take Gaussian steps in their compartment's tensor frame (NODDI
    protons are split by the nested fractions; each intra-neurite proton
    diffuses along its own Watson-drawn axis). Phases accrue under the PGSE
    waveform and the signal is the magnitude of the complex average. With
    ``cfg.snr`` set, complex Gaussian noise is added before the magnitude and
    the result is divided by the mean of ``cfg.n_b0`` noisy b=0 magnitudes.

    ``engine="walk"`` steps explicitly; ``engine="moment"`` draws each
    proton's accumulated dephasing moment from its exact Gaussian law, which
    is equivalent in distribution and much cheaper.
    """
    signal = simulate_complex(truth, scheme, cfg, rng, engine)
    if cfg.snr is None:
        return np.abs(signal)
    magnitude = noisy_magnitude(signal, cfg.snr, rng)
    b0 = noisy_magnitude(np.ones(cfg.n_b0, dtype=complex), cfg.snr, rng).mean()
    return magnitude / b0
