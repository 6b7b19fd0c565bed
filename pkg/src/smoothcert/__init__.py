"""Randomized-smoothing certification with scalar, diagonal and full SPD noise."""

__version__ = "0.1.0"
