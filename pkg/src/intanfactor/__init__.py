"""Intangible-investment factor construction and asset-pricing tests."""

__version__ = "0.1.0"
