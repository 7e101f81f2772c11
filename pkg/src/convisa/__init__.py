"""Convolutional ISA features and hand-crafted trajectory descriptors as conv-pool cascades."""

__version__ = "0.1.0"
