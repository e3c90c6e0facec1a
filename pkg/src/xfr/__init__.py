"""Explainable face verification through feature-guided face reconstruction."""

__version__ = "0.1.0"
