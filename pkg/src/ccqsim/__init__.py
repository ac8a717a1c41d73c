"""Cascaded cavity-QED joint-measurement simulator."""

__version__ = "0.1.0"
