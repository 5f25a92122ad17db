"""Unsupervised view-invariant pose representation learning."""

__version__ = "0.1.0"
