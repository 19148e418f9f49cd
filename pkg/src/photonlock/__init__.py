"""Optically locked stimulated photon echoes in a three-level Lambda ensemble."""

__version__ = "0.1.0"
