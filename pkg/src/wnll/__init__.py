"""Weighted nonlocal Laplacian interpolation on manifold point clouds."""

__version__ = "0.1.0"
