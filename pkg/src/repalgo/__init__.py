"""Algorand-style BFT proof-of-stake consensus with reputation-weighted voting."""

__version__ = "0.1.0"
