"""Truncated autoregressive models for areal data."""
__version__ = "0.1.0"
