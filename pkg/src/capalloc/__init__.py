"""Capacitated online resource allocation: LP rounding, oracles and diagnostics."""
__version__ = "0.1.0"
