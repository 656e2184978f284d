import json
from dataclasses import dataclass, field

import numpy as np

from ..errors import ParameterError


@dataclass(frozen=True, eq=False)
class CostMatrix:
    """Nonnegative finite cost matrix plus a description of how it was built."""

    matrix: np.ndarray
    cost: str = "sqeuclidean/2"
    penalty: float = None

    def __post_init__(self):
        M = np.asarray(self.matrix, dtype=float)
        if M.ndim != 2:
            raise ParameterError("cost matrix must be 2-D")
        if not np.all(np.isfinite(M)) or np.any(M < 0):
            raise ParameterError("cost entries must be finite and nonnegative")
        M = M.copy()
        M.setflags(write=False)
        object.__setattr__(self, "matrix", M)

    @property
    def shape(self):
        return self.matrix.shape

    def scaled(self, s):
        return CostMatrix(self.matrix * s, self.cost, None if self.penalty is None else self.penalty * s)


def as_cost(M):
    if isinstance(M, CostMatrix):
        return M.matrix
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise ParameterError("cost matrix must be 2-D")
    return M


@dataclass(frozen=True, eq=False)
class Coupling:
    gamma: np.ndarray
    a: np.ndarray
    b: np.ndarray

    def row_error(self):
        return float(np.abs(self.gamma.sum(axis=1) - self.a).sum())

    def col_error(self):
        return float(np.abs(self.gamma.sum(axis=0) - self.b).sum())

    def marginal_error(self):
        return max(self.row_error(), self.col_error())

    @property
    def T(self):
        return Coupling(self.gamma.T, self.b, self.a)


@dataclass(eq=False)
class TransportResult:
    coupling: Coupling
    objective: float
    converged: bool
    iterations: int
    solver: str
    info: dict = field(default_factory=dict)

    @property
    def gamma(self):
        return self.coupling.gamma

    def sidecar(self):
        return {
            "solver": self.solver,
            "objective": self.objective,
            "converged": self.converged,
            "iterations": self.iterations,
            "marginal_error": self.coupling.marginal_error(),
            "a": self.coupling.a.tolist(),
            "b": self.coupling.b.tolist(),
        }

    def save(self, csv_path, sidecar_path, extra=None):
        np.savetxt(csv_path, self.gamma, delimiter=",", fmt="%.17g")
        doc = self.sidecar()
        if extra:
            doc.update(extra)
        with open(sidecar_path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)


def check_marginals(a, b, n, m, tol=1e-9):
    a = np.asarray(a, dtype=float).reshape(-1)
    b = np.asarray(b, dtype=float).reshape(-1)
    if a.shape != (n,) or b.shape != (m,):
        raise ParameterError(f"marginals of length {a.shape[0]}, {b.shape[0]} do not fit a {n}x{m} cost")
    if np.any(a < 0) or np.any(b < 0):
        raise ParameterError("marginals must be nonnegative")
    if abs(a.sum() - b.sum()) > tol:
        raise ParameterError(f"marginal sums differ: {a.sum()!r} vs {b.sum()!r}")
    return a, b


def uniform(n):
    return np.full(n, 1.0 / n)
