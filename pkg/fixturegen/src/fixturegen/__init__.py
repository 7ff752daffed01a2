"""Minimal-basis quantum chemistry toolchain for fixture generation."""

__version__ = "0.1.0"
