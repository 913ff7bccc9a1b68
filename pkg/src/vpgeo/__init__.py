"""Vanishing-point temporal geometry features and a geometry-aware
transformer detector, trainable at desk scale on a synthetic
Manhattan-world generator."""

__version__ = "0.1.0"
