"""Minimum-energy observers with a learned value-function gradient."""

__version__ = "0.1.0"
