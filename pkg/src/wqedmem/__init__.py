"""Collective emission of an atom chain in a 1D waveguide with full field memory."""

__version__ = "0.1.0"
