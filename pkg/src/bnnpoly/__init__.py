"""Bottleneck linear networks and their multilinear surrogates."""
__version__ = "0.1.0"
