"""Hyperspectral and multispectral image fusion in the Fourier domain."""

__version__ = "0.1.0"
