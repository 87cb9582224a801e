"""Shi-VAE: heterogeneous sequential VAE for imputing bursts of missing values."""

__version__ = "0.1.0"
