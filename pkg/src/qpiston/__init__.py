"""Quantum particle in a box with a classical, pressure-driven moving wall."""

__version__ = "0.1.0"
