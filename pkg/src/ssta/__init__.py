"""Salient spatially transformed adversarial examples at desk scale."""

__version__ = "0.1.0"
