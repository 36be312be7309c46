"""Spectral-Galerkin stochastic Burgers simulation and minimum-action tools."""

__version__ = "0.1.0"
