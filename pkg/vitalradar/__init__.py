"""Simulator-backed FMCW MIMO radar toolkit for posture-guided vital-sign estimation."""

__version__ = "0.1.0"
