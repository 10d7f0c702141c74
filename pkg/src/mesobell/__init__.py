"""Entangled neutral-B-meson pairs: flavour correlations, CHSH statistic,
exact event generation and the matching local hidden-variable reading."""

__version__ = "0.1.0"
