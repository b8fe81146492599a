"""Data-free 3D face recognition on raw point clouds."""

__version__ = "0.1.0"
