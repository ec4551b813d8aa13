"""Conformal GNS constants on radial model geometries."""

__version__ = "0.1.0"
