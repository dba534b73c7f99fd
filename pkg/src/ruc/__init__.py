"""Randomized uphill climbing search for symbolic time-series feature programs."""

__version__ = "0.1.0"
