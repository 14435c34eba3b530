"""Numerics workbench for coupled reaction-diffusion-convection systems:
forward solvers, weighted-inequality audits, one-component coefficient
reconstruction, empirical stability constants and control synthesis."""

__version__ = "0.1.0"
