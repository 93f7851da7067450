"""Trajectory planning toolkit for four-wheel independent steering vehicles."""
__version__ = "0.1.0"
