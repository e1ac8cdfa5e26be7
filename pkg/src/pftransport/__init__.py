"""Density transport prediction and control via Perron-Frobenius generator models."""

__version__ = "0.1.0"
