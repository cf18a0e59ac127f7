"""Bayesian nonparametric and semiparametric density estimation."""

from . import core, dirichlet, gendirichlet, hermite, kernels, local, loglinear, simulation
from .core import DensityCurve, EvalGrid, LocationScale, NormalDensity, PosteriorGrid, Sample
from .errors import BayesDensError
from .kernels import GAUSSIAN, UNIFORM, YEPANECHNIKOV, get_kernel, kde

__version__ = "0.1.0"

__all__ = [
    "core", "dirichlet", "gendirichlet", "hermite", "kernels", "local", "loglinear",
    "simulation", "DensityCurve", "EvalGrid", "LocationScale", "NormalDensity",
    "PosteriorGrid", "Sample", "BayesDensError", "GAUSSIAN", "UNIFORM", "YEPANECHNIKOV",
    "get_kernel", "kde",
]
