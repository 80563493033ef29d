"""Transport bounds for discrete Schroedinger operators with Sturmian potentials."""

__version__ = "0.1.0"
