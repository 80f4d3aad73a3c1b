"""Biharmonic-map conservation laws and flow on the flat 4-torus."""

__version__ = "0.1.0"
