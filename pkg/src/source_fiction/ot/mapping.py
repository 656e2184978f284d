"""Turning couplings into point maps, and Wasserstein distances."""

import numpy as np
from scipy.spatial.distance import cdist

from ..errors import DegenerateCouplingError, ParameterError
from .emd import solve_emd
from .types import Coupling


def barycentric_map(gamma, y):
    """Send row ``i`` to ``Σ_j γ_ij y_j / Σ_j γ_ij``.

    ``gamma`` may be a Coupling or a plain (n, m) array; ``y`` has m rows.
    A row without mass has no image and raises DegenerateCouplingError.
    """
    G = gamma.gamma if isinstance(gamma, Coupling) else np.asarray(gamma, dtype=float)
    y = np.asarray(y, dtype=float)
    if G.ndim != 2 or y.ndim != 2 or G.shape[1] != y.shape[0]:
        raise ParameterError(f"coupling {G.shape} does not match {y.shape[0]} target rows")
    mass = G.sum(axis=1)
    empty = np.flatnonzero(~(mass > 0))
    if len(empty):
        raise DegenerateCouplingError(int(empty[0]))
    return (G @ y) / mass[:, None]


def pnorm_cost(x, y, p):
    """``‖x_i − y_j‖^p`` for all row pairs."""
    return cdist(np.asarray(x, dtype=float), np.asarray(y, dtype=float)) ** p


def wasserstein_distance(M, a, b, p=2.0):
    """``W_p = (min <γ, M>)^(1/p)`` where ``M`` already holds ``‖x_i − y_j‖^p``."""
    if not p >= 1:
        raise ParameterError(f"p must be >= 1, got {p!r}")
    obj = solve_emd(M, a, b).objective
    return max(obj, 0.0) ** (1.0 / p)
