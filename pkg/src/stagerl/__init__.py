"""Staged reward curriculum for planar pick-and-place RL."""

__version__ = "0.1.0"
