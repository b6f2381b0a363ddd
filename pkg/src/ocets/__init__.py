"""Time-series forecasting as ordinal classification over value bins."""

__version__ = "0.1.0"
