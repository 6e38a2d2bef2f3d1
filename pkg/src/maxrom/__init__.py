"""Reduced-order modelling of 2-D Maxwell scattering: DGTD snapshots, two-step POD,
convolutional autoencoder and cubic-spline interpolation."""

__version__ = "0.1.0"
