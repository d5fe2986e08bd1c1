"""Simulation and constrained optimization of CZ-type gates on blockaded atom arrays."""

__version__ = "0.1.0"
