"""Random forests with time-varying linear leaves for macroeconomic forecasting."""

__version__ = "0.1.0"
