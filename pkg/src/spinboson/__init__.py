"""Perturbation coefficients for generalized spin-boson models."""

__version__ = "0.1.0"
