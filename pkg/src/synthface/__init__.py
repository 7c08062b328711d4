"""Synthetic face-recognition toolkit: scene manifests, alignment, margin training, verification."""

__version__ = "0.1.0"
