"""Generative passage retrieval over multiview identifiers."""

__version__ = "0.1.0"
