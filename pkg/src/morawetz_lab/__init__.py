"""Numerical laboratory for frequency-localized Morawetz estimates on radial manifolds."""

__version__ = "0.1.0"
