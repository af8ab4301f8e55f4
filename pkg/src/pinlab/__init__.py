"""Numerical laboratory for disordered pinning models on heavy-tailed renewal processes."""

__version__ = "0.1.0"
