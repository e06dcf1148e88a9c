"""Concentration classification of SERS spectra."""

__version__ = "0.1.0"
