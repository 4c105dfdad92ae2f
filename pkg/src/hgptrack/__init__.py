"""Hybrid GP trajectory forecasting for V2X target classification."""

__version__ = "0.1.0"
