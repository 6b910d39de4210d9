"""Spatial and spatiotemporal GARCH-type models.

Simulation, non-linear least-squares estimation and residual diagnostics for
the spARCH, spGARCH and hybrid spGARCH processes.
"""

from spgarch.errors import *  # noqa: F401,F403
from spgarch.kernels import BACKEND
from spgarch.model import ModelSpec, StandardNormal, Theta, TruncatedNormal, Variant
from spgarch.simulate import RandomField, SolveReport, simulate_field
from spgarch.weights import SiteSet, WeightMatrix, rook_grid

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "ModelSpec",
    "RandomField",
    "SiteSet",
    "SolveReport",
    "StandardNormal",
    "Theta",
    "TruncatedNormal",
    "Variant",
    "WeightMatrix",
    "rook_grid",
    "simulate_field",
]
