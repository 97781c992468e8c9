"""Lossy acoustic-tube simulation and PINN-based identification of wall-loss constants."""

__version__ = "0.1.0"
