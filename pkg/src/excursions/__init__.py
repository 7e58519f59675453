"""Random-walk excursions on lattice approximations of planar domains and their Brownian limits."""

__version__ = "0.1.0"
