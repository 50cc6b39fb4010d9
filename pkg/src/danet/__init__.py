"""Density adaptive convolution and interactive attention for point clouds."""

__version__ = "0.1.0"
