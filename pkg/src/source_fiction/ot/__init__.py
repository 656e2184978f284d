"""Discrete optimal transport: costs, exact and entropic solvers, maps."""

from .cost import build_cost, sqeuclidean_half
from .emd import solve_emd
from .mapping import barycentric_map, pnorm_cost, wasserstein_distance
from .otlin import LinearMap, solve_otlin
from .regularized import group_lasso, solve_sinkhorn_l1l2, solve_sinkhorn_lpl1
from .sinkhorn import solve_sinkhorn
from .types import CostMatrix, Coupling, TransportResult, uniform

SOLVERS = ("emd", "sinkhorn", "sinkhorn_l1l2", "sinkhorn_lpl1", "otlin")

__all__ = [
    "CostMatrix", "Coupling", "LinearMap", "SOLVERS", "TransportResult", "barycentric_map",
    "build_cost", "group_lasso", "pnorm_cost", "solve_emd", "solve_otlin", "solve_sinkhorn",
    "solve_sinkhorn_l1l2", "solve_sinkhorn_lpl1", "sqeuclidean_half", "uniform",
    "wasserstein_distance",
]
