"""Error metrics against reference maps."""

from __future__ import annotations

import numpy as np


class MetricError(ValueError):
    """Inputs for which the metric is undefined."""


def nrmse(pred, ref, mask=None) -> float:
    """``100 * ||pred - ref||_2 / ||ref||_2`` over the masked elements (percent)."""
    pred = np.asarray(pred, dtype=float)
    ref = np.asarray(ref, dtype=float)
    if pred.shape != ref.shape:
        raise MetricError(f"shape mismatch: {pred.shape} vs {ref.shape}")
    if mask is not None:
        mask = np.asarray(mask).astype(bool)
        if mask.shape != ref.shape:
            raise MetricError(f"mask shape {mask.shape} does not match {ref.shape}")
        pred, ref = pred[mask], ref[mask]
    if ref.size == 0:
        raise MetricError("mask selects no elements")
    norm = np.linalg.norm(ref)
    if norm == 0:
        raise MetricError("reference is all zero within the mask")
    return float(100.0 * np.linalg.norm(pred - ref) / norm)


def nrmse_per_parameter(pred, ref, names, mask=None) -> dict[str, float]:
    """NRMSE of each trailing-axis channel of ``(..., P)`` maps."""
    return {n: nrmse(pred[..., i], ref[..., i], mask) for i, n in enumerate(names)}
