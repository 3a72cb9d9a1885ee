"""Residual-phase forecasting for interferometric fringe streams."""

__version__ = "0.1.0"
