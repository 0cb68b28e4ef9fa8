"""Randomized free-wave data, mixed-norm ensemble experiments and a
fractional wave-maps model solver."""

__version__ = "0.1.0"
