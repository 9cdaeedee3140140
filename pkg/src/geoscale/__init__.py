"""Attractiveness scaling of regions from geo-tagged media and migration data."""

__version__ = "0.1.0"
