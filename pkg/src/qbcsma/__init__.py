"""Exact simulation and numerical analysis of queue-based CSMA on interference graphs."""

__version__ = "0.1.0"
