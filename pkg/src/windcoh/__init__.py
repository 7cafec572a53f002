"""Slow coherency of synchronous machines under DFIG wind penetration."""

__version__ = "0.1.0"
