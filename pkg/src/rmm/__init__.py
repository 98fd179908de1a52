"""Memorized-modulation restoration toolkit."""

__version__ = "0.1.0"
