"""Kernel outcome weighted learning with convex and robust surrogate losses."""
__version__ = "0.1.0"
