"""Deterministic training-trajectory stability laboratory."""

__version__ = "0.1.0"
