"""Symbolic Zendo played by an online particle-filter learner."""

__version__ = "0.1.0"
