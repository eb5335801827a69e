"""Synthetic brain-like phantoms with known parameter maps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from qmap.fit.dti import tensor_scalars
from qmap.forward.dataset import DIFFUSIVITY_UNIT
from qmap.forward.models import dti_signal, noddi_signal
from qmap.forward.simulate import SimConfig, mc_simulate, noisy_magnitude
from qmap.forward.truth import D_ISO, DtiGroundTruth, NoddiGroundTruth
from qmap.scheme import GradientScheme

DTI_NAMES = ("FA", "MD", "AD", "RD")
NODDI_NAMES = ("ICVF", "ISOVF", "ODI")


@dataclass(frozen=True, eq=False)
class Phantom:
    """Voxel truths (object array, ``None`` outside the mask), mask and
    reference maps ``(*shape, P)`` in physical units."""

    model: str
    truths: np.ndarray
    mask: np.ndarray
    reference: np.ndarray
    names: tuple

    @property
    def shape(self) -> tuple:
        return self.mask.shape


def _coords(shape):
    axes = [(np.arange(n) + 0.5) / n * 2 - 1 for n in shape]
    return np.meshgrid(*axes, indexing="ij")


def _regions(shape, rng):
    """Masks of the head, a free-water core, a cortex-like rim and the
    remaining fibrous tissue, with a smooth fibre-direction field."""
    x, y, z = _coords(shape)
    ax, ay = rng.uniform(0.8, 0.95, 2)
    r = np.sqrt((x / ax) ** 2 + (y / ay) ** 2)
    head = r < 1.0
    cx, cy = rng.uniform(-0.15, 0.15, 2)
    core = head & (np.sqrt(((x - cx) / 0.25) ** 2 + ((y - cy) / 0.15) ** 2) < 1.0)
    rim = head & (r > 0.78) & ~core
    fibre = head & ~core & ~rim
    # circumferential fibres tilting out of plane with a random phase
    phase = rng.uniform(0, 2 * np.pi)
    ang = np.arctan2(y, x)
    tilt = 0.6 * np.sin(2 * ang + phase) + 0.8 * z
    dirs = np.stack([-np.sin(ang) * np.cos(tilt), np.cos(ang) * np.cos(tilt), np.sin(tilt)], axis=-1)
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    return head, core, rim, fibre, dirs, r


def _frame(e1: np.ndarray) -> np.ndarray:
    helper = np.array([0.0, 0.0, 1.0]) if abs(e1[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    e2 = np.cross(e1, helper)
    e2 /= np.linalg.norm(e2)
    return np.stack([e1, e2, np.cross(e1, e2)], axis=1)


def make_dti_phantom(shape=(16, 16, 4), seed: int = 0) -> Phantom:
    """Tensor phantom: free water in the core, near-isotropic rim, anisotropic
    bundles elsewhere with smoothly varying diffusivities."""
    rng = np.random.default_rng(seed)
    head, core, rim, fibre, dirs, r = _regions(shape, rng)
    truths = np.empty(shape, dtype=object)
    ref = np.zeros(shape + (4,))
    wave = 0.5 + 0.5 * np.sin(3 * r * np.pi + rng.uniform(0, 2 * np.pi))
    for idx in zip(*np.nonzero(head)):
        if core[idx]:
            d = np.full(3, D_ISO)
        elif rim[idx]:
            d1 = 0.95e-3 + 0.1e-3 * wave[idx]
            d = np.array([d1, 0.85 * d1, 0.75 * d1])
        else:
            d1 = 1.5e-3 + 0.3e-3 * wave[idx]
            perp = 0.25e-3 + 0.3e-3 * (1 - wave[idx])
            d = np.array([d1, 1.2 * perp, perp])
        t = DtiGroundTruth(d, _frame(dirs[idx]))
        truths[idx] = t
        ref[idx] = tensor_scalars(t.tensor()).stack()
    return Phantom("dti", truths, head, ref, DTI_NAMES)


def make_noddi_phantom(shape=(16, 16, 4), seed: int = 0) -> Phantom:
    """NODDI phantom: CSF core, low-density dispersed rim, dense coherent bundles."""
    rng = np.random.default_rng(seed)
    head, core, rim, fibre, dirs, r = _regions(shape, rng)
    truths = np.empty(shape, dtype=object)
    ref = np.zeros(shape + (3,))
    wave = 0.5 + 0.5 * np.sin(3 * r * np.pi + rng.uniform(0, 2 * np.pi))
    for idx in zip(*np.nonzero(head)):
        if core[idx]:
            p = (0.1, 0.9, 0.5)
        elif rim[idx]:
            p = (0.3 + 0.1 * wave[idx], 0.1, 0.5 + 0.1 * wave[idx])
        else:
            p = (0.5 + 0.25 * wave[idx], 0.05, 0.1 + 0.2 * (1 - wave[idx]))
        truths[idx] = NoddiGroundTruth(*p, dirs[idx])
        ref[idx] = p
    return Phantom("noddi", truths, head, ref, NODDI_NAMES)


def make_phantom(model: str, shape=(16, 16, 4), seed: int = 0) -> Phantom:
    return (make_dti_phantom if model == "dti" else make_noddi_phantom)(tuple(shape), seed)


def phantom_signals(phantom: Phantom, scheme: GradientScheme, snr: float | None = 50.0,
                    seed: int = 0, cfg: SimConfig | None = None, engine: str = "moment",
                    analytic: bool = False) -> np.ndarray:
    """Normalized DW signals ``(*shape, len(scheme))``; zeros outside the mask.

    Simulated voxel by voxel with the Monte-Carlo engine (or the analytic
    model plus the same noise when ``analytic``), normalized by the mean of
    the scheme's noisy b=0 magnitudes.
    """
    cfg = (cfg or SimConfig.for_model(phantom.model)).replace(snr=snr, n_b0=max(scheme.n_b0, 1))
    out = np.zeros(phantom.shape + (len(scheme),))
    idx = list(zip(*np.nonzero(phantom.mask)))
    for child, v in zip(np.random.SeedSequence(seed).spawn(len(idx)), idx):
        rng = np.random.default_rng(child)
        truth = phantom.truths[v]
        if analytic:
            clean = (dti_signal(truth, scheme.bvals, scheme.bvecs) if phantom.model == "dti"
                     else noddi_signal(truth, scheme.bvals, scheme.bvecs))
            if snr is None:
                out[v] = clean
                continue
            b0 = noisy_magnitude(np.ones(cfg.n_b0), snr, rng).mean()
            out[v] = noisy_magnitude(clean, snr, rng) / b0
        else:
            out[v] = mc_simulate(truth, scheme, cfg, rng, engine)
    return out


def training_units(maps: np.ndarray, model: str) -> np.ndarray:
    """Physical maps -> the units networks are trained in."""
    out = np.array(maps, dtype=float)
    if model == "dti":
        out[..., 1:] /= DIFFUSIVITY_UNIT
    return out
