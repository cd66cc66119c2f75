"""Conditional diffusion interpolation of scattered magnetic-field measurements."""

__version__ = "0.1.0"
