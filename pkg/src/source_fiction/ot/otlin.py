"""Joint estimation of an entropic coupling and an affine map ``x ↦ x L + bias``."""

import logging
from dataclasses import dataclass

import numpy as np

from ..errors import ParameterError
from .cost import apply_label_penalty, label_pair_masks, sqeuclidean_half
from .sinkhorn import DEFAULT_MAX_ITER, DEFAULT_TOL, DEFAULT_REG, _sinkhorn_coupling, entropy_term
from .types import Coupling, TransportResult, check_marginals

log = logging.getLogger(__name__)

DEFAULT_MU = 1.0
DEFAULT_OUTER_ITER = 10
_MIN_RIDGE = 1e-10


@dataclass(frozen=True)
class LinearMap:
    L: np.ndarray
    bias: np.ndarray

    def __call__(self, x):
        return np.asarray(x, dtype=float) @ self.L + self.bias


def _fit_map(x, y, gamma, free, mu, warnings):
    """Minimize Σ_free γ_ij ½‖x_i L + bias − y_j‖² + (mu/2)‖L − I‖² in closed form.

    The bias is not regularized. If the normal equations are singular the
    ridge is raised step by step and a warning is recorded.
    """
    n, d = x.shape
    G = np.where(free, gamma, 0.0)
    w = G.sum(axis=1)
    X = np.hstack([x, np.ones((n, 1))])
    # Σ_ij G_ij x̃_iᵀ y_j  and  Σ_i w_i x̃_iᵀ x̃_i
    rhs = X.T @ (G @ y)
    A = X.T @ (w[:, None] * X)
    D = np.eye(d + 1)
    D[d, d] = 0.0
    target = np.vstack([np.eye(d), np.zeros((1, d))])
    ridge = mu
    while True:
        lhs = A + ridge * D
        rhs_full = rhs + ridge * (D @ target)
        if np.linalg.cond(lhs) < 1e12:
            theta = np.linalg.solve(lhs, rhs_full)
            break
        bump = max(ridge * 10.0, _MIN_RIDGE)
        warnings.append(f"singular normal equations; ridge raised from {ridge:g} to {bump:g}")
        log.warning(warnings[-1])
        ridge = bump
        if ridge > 1e12:
            raise ParameterError("could not regularize the map fit")
        # an unregularized bias with no mass anywhere cannot be pinned down
        if not w.sum() > 0:
            D[d, d] = 1.0
    return theta[:d], theta[d], ridge


def _map_cost(x, y, lin, x_labels, y_labels, penalty):
    base = sqeuclidean_half(lin(x), y)
    M, _ = apply_label_penalty(base, x_labels, y_labels, penalty)
    return M


def solve_otlin(x, y, a, b, reg=DEFAULT_REG, mu=DEFAULT_MU, outer_iter=DEFAULT_OUTER_ITER,
                x_labels=None, y_labels=None, penalty=None, max_iter=DEFAULT_MAX_ITER,
                tol=DEFAULT_TOL):
    """Alternate between a Sinkhorn coupling and an affine map fitted to it.

    The joint objective is

        <γ, C_L> + reg Σ γ log γ + (mu/2) ‖L − I‖²_F,
        C_L[i, j] = ½‖x_i L + bias − y_j‖²,

    where pairs with labels on both sides cost 0 (same label) or
    ``penalty`` (different labels) regardless of the map. The γ-step is a
    Sinkhorn solve on ``C_L``; the map step is the exact weighted ridge
    least-squares fit of ``x L + bias`` to the coupling's targets. Each
    step minimizes the objective over its block, so the objective does not
    increase (unless the fit had to raise its ridge, which is recorded in
    ``info["warnings"]``).

    Returns
    -------
    (TransportResult, LinearMap)
        ``info["objective_history"]`` records the joint objective after
        every outer iteration.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 2 or y.ndim != 2 or x.shape[1] != y.shape[1]:
        raise ParameterError(f"feature dimensions differ: {x.shape} vs {y.shape}")
    if not mu > 0:
        raise ParameterError("mu must be positive")
    if not reg > 0:
        raise ParameterError("reg must be positive")
    if outer_iter < 1:
        raise ParameterError("outer_iter must be >= 1")
    n, d = x.shape
    m = y.shape[0]
    a, b = check_marginals(a, b, n, m)
    same, diff = label_pair_masks(x_labels, y_labels, n, m)
    free = ~(same | diff)
    if (same | diff).any():
        # validate / resolve the penalty once, against the identity-map cost
        _, penalty = apply_label_penalty(sqeuclidean_half(x, y), x_labels, y_labels, penalty)

    lin = LinearMap(np.eye(d), np.zeros(d))
    warnings = []
    history = []
    converged = True
    iterations = 0

    def joint(gamma, M, lin):
        dev = lin.L - np.eye(d)
        return float(np.sum(gamma * M)) + reg * entropy_term(gamma) + 0.5 * mu * float(np.sum(dev * dev))

    for _ in range(outer_iter):
        M = _map_cost(x, y, lin, x_labels, y_labels, penalty)
        gamma, it, ok, _ = _sinkhorn_coupling(M, a, b, reg, max_iter, tol)
        iterations += it
        converged = converged and ok
        L, bias, _ = _fit_map(x, y, gamma, free, mu, warnings)
        lin = LinearMap(L, bias)
        M = _map_cost(x, y, lin, x_labels, y_labels, penalty)
        history.append(joint(gamma, M, lin))
    info = {"reg": reg, "mu": mu, "objective_history": history, "warnings": warnings,
            "L": lin.L, "bias": lin.bias}
    result = TransportResult(Coupling(gamma, a, b), float(np.sum(gamma * M)), converged, iterations,
                             "otlin", info)
    return result, lin
