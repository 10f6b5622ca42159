"""Accelerated distributed gradient methods over random networks."""
__version__ = "0.1.0"
