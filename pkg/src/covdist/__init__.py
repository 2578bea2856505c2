"""Consistent estimation of distances between covariance matrices."""

__version__ = "0.1.0"
