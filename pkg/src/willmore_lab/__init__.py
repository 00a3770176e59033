"""Numerical workbench for the conformal Willmore energy in near-flat metrics."""

__version__ = "0.1.0"
