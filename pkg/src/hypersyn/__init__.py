"""Hypersyn: mutual-credit payments over authenticated bilateral edges."""

__version__ = "0.1.0"
