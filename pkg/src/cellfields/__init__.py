"""Variational field theory on cellular discrete spacetimes."""

from .complexes import (
    TimeComplex,
    CartesianComplex2D,
    CubicalComplexND,
    build_time_complex,
    build_cartesian_2d,
    build_cubical,
)

__all__ = [
    "TimeComplex",
    "CartesianComplex2D",
    "CubicalComplexND",
    "build_time_complex",
    "build_cartesian_2d",
    "build_cubical",
]

__version__ = "0.1.0"
