"""Affine differential invariants and branch classification for surface jets."""

from .jets import DEFAULT_ORDER, Jet2
from .group import AffineElement, PointedSurfaceJet, prolong, random_element

__all__ = [
    "DEFAULT_ORDER",
    "Jet2",
    "AffineElement",
    "PointedSurfaceJet",
    "prolong",
    "random_element",
]

__version__ = "0.1.0"
