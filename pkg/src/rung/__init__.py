"""Robust unbiased graph smoothing and its experiment harness."""

from . import penalties
from .graph import SparseGraph, build_graph, normalized_weight, spectral_norm
from .penalties import Penalty
from .smoothing import (
    Adjacency,
    DivergenceError,
    GraphSmoother,
    SmootherConfig,
    SmootherState,
    bound_gradient,
    bound_hessian_dense,
    compute_weights,
    edge_difference,
    irls_step,
    objective,
    qn_irls_step,
    smooth,
    upper_bound,
)
from . import attack, classify, datasets, location

__version__ = "0.1.0"

__all__ = [
    "Adjacency",
    "DivergenceError",
    "GraphSmoother",
    "Penalty",
    "SmootherConfig",
    "SmootherState",
    "SparseGraph",
    "attack",
    "bound_gradient",
    "bound_hessian_dense",
    "build_graph",
    "classify",
    "compute_weights",
    "datasets",
    "edge_difference",
    "irls_step",
    "location",
    "normalized_weight",
    "objective",
    "penalties",
    "qn_irls_step",
    "smooth",
    "spectral_norm",
    "upper_bound",
]
