"""Compressive-sensing recovery of 1-D biomedical signals with a GMM plug-and-play prior."""

__version__ = "0.1.0"
