"""Learned point-cloud transmission over noisy channels, with a classical coded baseline."""

__version__ = "0.1.0"
