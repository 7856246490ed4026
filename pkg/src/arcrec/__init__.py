"""Reference-dependent choice modeling for recommendation."""

__version__ = "0.1.0"
