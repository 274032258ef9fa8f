"""Branching Brownian motion in a random branching environment: simulation,
PDE solvers and tilted-measure tools."""
from ._backend import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
