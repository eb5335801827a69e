"""Scheme-agnostic diffusion parameter mapping on simulated data.

Signals from any gradient scheme are placed in normalized q-space and
quantized into a fixed-size grid (the Qmatrix), which a small residual
convolutional network maps to DTI or NODDI parameters.
"""

__version__ = "0.1.0"
