"""Numerical laboratory for the dissipative two-qubit Rabi model."""

__version__ = "0.1.0"
