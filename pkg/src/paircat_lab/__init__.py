"""Numerical laboratory for the two-mode pair-cat bosonic code."""

__version__ = "0.1.0"

from . import channels, cli, dynamics, gates, hilbert, paircat, stabilizer_analysis

__all__ = [
    "hilbert",
    "paircat",
    "dynamics",
    "stabilizer_analysis",
    "channels",
    "gates",
    "cli",
    "__version__",
]
