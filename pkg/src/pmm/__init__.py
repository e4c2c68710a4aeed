"""Verifiable queries over committed mobility data."""

__version__ = "0.1.0"
