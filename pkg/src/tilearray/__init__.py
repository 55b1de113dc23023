"""Simulation and analysis toolkit for arrays of tilting origami tiles joined by a compliant surface."""

__version__ = "0.1.0"
