"""Spectral simulation and verification tools for the 2D stochastic Navier-Stokes equations."""

__version__ = "0.1.0"
