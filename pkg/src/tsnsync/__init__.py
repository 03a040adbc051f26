"""Deterministic simulation of gPTP time sync across TSN bridges and a 5G virtual bridge."""

__version__ = "0.1.0"
