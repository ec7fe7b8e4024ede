"""Numerical laboratory for posterior consistency: divergences, separation certificates, covers and entropy, and simulation scenarios."""

__version__ = "0.1.0"
