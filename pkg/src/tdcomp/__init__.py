"""Delay-compensating functional observers for systems with delayed outputs."""

__version__ = "0.1.0"
