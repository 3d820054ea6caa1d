"""Simulation and verification of spectrally positive Levy processes conditioned on large heights."""

__version__ = "0.1.0"
