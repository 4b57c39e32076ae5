"""Simulator and property checks for the 2D compressible nematic liquid crystal flow."""

__version__ = "0.1.0"
