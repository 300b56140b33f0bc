"""Synthetic auto-bidding under budget and ROI constraints."""

__version__ = "0.1.0"
