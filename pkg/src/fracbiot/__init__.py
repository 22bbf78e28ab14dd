"""Finite-element solvers for Biot poroelasticity in a thin fractured layer and its vanishing-aperture limit models."""

__version__ = "0.1.0"
