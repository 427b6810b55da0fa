"""Popularity-regularised Laplacian eigenmaps for recommender initialisation."""

__version__ = "0.1.0"
