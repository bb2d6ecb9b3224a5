"""Simulation and certification of mesh-interferometer quantum random number generators."""

__version__ = "0.1.0"
