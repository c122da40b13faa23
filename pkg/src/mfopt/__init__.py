"""Optimal solution updates of a low-fidelity optimization problem using a few high-fidelity solves."""

__version__ = "0.1.0"
