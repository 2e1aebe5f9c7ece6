"""Generalized iterated function systems of order m.

Attractors by Hutchinson-type iteration on point clouds, hierarchical
code-space addressing, and constructive connectedness analysis.
"""
from .core import (AffineMap, AttractorApprox, FunctionMap, Gifs, LinearPhi, SamplingPolicy, TabulatedPhi,
                   a_priori_error, absorbing_ball, attractor_iterate, contraction_check, fixed_point_residual,
                   hutchinson, map_apply, phi_eval)
from .errors import (ConsistencyError, ConstructionError, DisconnectionError, DivergenceError, GifsError,
                     ResourceError, UsageError)
from .geometry import CompactSetApprox, box_grid, diameter, hausdorff, interval_grid, max_dist, min_set_distance

__all__ = [
    "AffineMap", "AttractorApprox", "CompactSetApprox", "ConsistencyError", "ConstructionError",
    "DisconnectionError", "DivergenceError", "FunctionMap", "Gifs", "GifsError", "LinearPhi", "ResourceError",
    "SamplingPolicy", "TabulatedPhi", "UsageError", "a_priori_error", "absorbing_ball", "attractor_iterate",
    "box_grid", "contraction_check", "diameter", "fixed_point_residual", "hausdorff", "hutchinson",
    "interval_grid", "map_apply", "max_dist", "min_set_distance", "phi_eval",
]
