"""Incomplete U-statistics: estimation, deviation bounds and learning with sampled risks."""

__version__ = "0.1.0"
