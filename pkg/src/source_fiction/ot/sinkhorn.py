"""Entropic optimal transport with log-domain Sinkhorn iterations.

Small regularizations make plain Sinkhorn crawl: when the coupling nearly
splits into blocks, the scaling map has several eigenvalues close to one.
The row/column updates are therefore wrapped in (lightly damped) Anderson
acceleration with a safeguard that falls back to the plain update whenever
the extrapolated point does not reduce the fixed-point residual. If that
still has not converged after a fixed budget of sweeps, moderate-size
problems switch to damped Newton steps on the dual, which converge
quadratically once the potentials are roughly right.
"""

import numpy as np

from ..errors import InstabilityError, ParameterError
from .types import Coupling, TransportResult, as_cost, check_marginals

DEFAULT_REG = 4.0
DEFAULT_MAX_ITER = 10_000
DEFAULT_TOL = 1e-9
ANDERSON_MEMORY = 8
# Tikhonov weight (relative to the Gram trace) for the Anderson least squares
ANDERSON_DAMPING = 1e-8
# Newton is attempted every NEWTON_AFTER sweeps on problems with n + m <= NEWTON_MAX_SIZE
NEWTON_AFTER = 300
NEWTON_MAX_SIZE = 1500


def _lse_rows(X):
    top = X.max(axis=1)
    safe = np.where(np.isfinite(top), top, 0.0)
    with np.errstate(divide="ignore"):
        return np.log(np.exp(X - safe[:, None]).sum(axis=1)) + safe


class _Scaling:
    """One Sinkhorn sweep ``f -> (f', g)``: fit columns to ``b``, then rows to ``a``."""

    def __init__(self, M, a, b, reg):
        self.K = -M / reg
        self.reg = reg
        self.log_a = np.log(a)
        self.log_b = np.log(b)
        self.b = b

    def __call__(self, f):
        reg = self.reg
        g = reg * (self.log_b - _lse_rows((self.K + f[:, None] / reg).T))
        f_new = reg * (self.log_a - _lse_rows(self.K + g[None, :] / reg))
        return f_new, g

    def column_error(self, f, g):
        col = np.exp(g / self.reg + _lse_rows((self.K + f[:, None] / self.reg).T))
        return float(np.abs(col - self.b).sum())


def _newton_direction(M, a, b, reg, f, g):
    """Newton step for the concave dual ``<f,a> + <g,b> − reg Σ exp((f_i + g_j − M_ij)/reg)``.

    The Hessian is singular along ``(f + c, g − c)``; adding a rank-one term
    on that direction fixes the gauge without changing the solution, since
    the gradient is orthogonal to it.
    """
    n, m = M.shape
    P = np.exp((f[:, None] + g[None, :] - M) / reg)
    r, c = P.sum(axis=1), P.sum(axis=0)
    grad = np.concatenate([a - r, b - c])
    H = np.empty((n + m, n + m))
    H[:n, :n] = np.diag(r)
    H[n:, n:] = np.diag(c)
    H[:n, n:] = P
    H[n:, :n] = P.T
    H /= reg
    w = np.concatenate([np.ones(n), -np.ones(m)])
    H += np.outer(w, w) * (np.trace(H) / (n + m) / (n + m))
    try:
        d = np.linalg.solve(H, grad)
    except np.linalg.LinAlgError:
        return None, None, grad
    return d[:n], d[n:], grad


def _dual(M, a, b, reg, f, g):
    # an overflowing trial point evaluates to −inf, which just makes the line search backtrack
    with np.errstate(over="ignore"):
        return float(f @ a + g @ b - reg * np.exp((f[:, None] + g[None, :] - M) / reg).sum())


def _newton(M, a, b, reg, step, f, budget, tol):
    """Damped Newton with Armijo backtracking; returns (f, g, steps, err) after a final sweep."""
    f_s, g = step(f)
    err = step.column_error(f_s, g)
    for k in range(1, budget + 1):
        df, dg, grad = _newton_direction(M, a, b, reg, f, g)
        if df is None:
            break
        base = _dual(M, a, b, reg, f, g)
        slope = float(grad @ np.concatenate([df, dg]))
        t = 1.0
        while _dual(M, a, b, reg, f + t * df, g + t * dg) < base + 1e-4 * t * slope:
            t *= 0.5
            if t < 1e-10:
                return f_s, step(f)[1], k, err
        f = f + t * df
        g = g + t * dg
        if not (np.all(np.isfinite(f)) and np.all(np.isfinite(g))):
            raise InstabilityError(reg, "non-finite potentials in a Newton step")
        f_s, g_s = step(f)
        err = step.column_error(f_s, g_s)
        if err < tol:
            return f_s, g_s, k, err
    f_s, g_s = step(f)
    return f_s, g_s, budget, err


def _centered(r):
    # potentials are defined up to f + c, g − c, so residuals are compared modulo constants
    return r - r.mean()


def sinkhorn_potentials(M, a, b, reg, max_iter=DEFAULT_MAX_ITER, tol=DEFAULT_TOL, f0=None,
                        memory=ANDERSON_MEMORY):
    """Dual potentials ``(f, g)`` of the entropic problem on strictly positive marginals.

    The coupling is ``exp((f_i + g_j − M_ij) / reg)``. After each sweep the
    row marginal is exact and convergence is judged on the L1 column error.

    Returns ``(f, g, iterations, converged, error)``.
    """
    step = _Scaling(M, a, b, reg)
    f = np.zeros(M.shape[0]) if f0 is None else np.array(f0, dtype=float)
    f_next, g = step(f)
    hist_f, hist_r = [], []
    err = np.inf
    for it in range(1, max_iter + 1):
        r = _centered(f_next - f)
        hist_f.append(f_next)
        hist_r.append(r)
        if len(hist_r) > memory + 1:
            hist_f.pop(0)
            hist_r.pop(0)
        if len(hist_r) > 1:
            dR = np.diff(np.array(hist_r), axis=0).T
            dF = np.diff(np.array(hist_f), axis=0).T
            gram = dR.T @ dR
            gram += (ANDERSON_DAMPING * np.trace(gram) / len(gram) + 1e-300) * np.eye(len(gram))
            coef = np.linalg.solve(gram, dR.T @ r)
            trial = f_next - dF @ coef
            trial_next, trial_g = step(trial)
            if np.abs(_centered(trial_next - trial)).sum() < np.abs(r).sum():
                f, f_next, g = trial, trial_next, trial_g
            else:
                f = f_next
                f_next, g = step(f)
                hist_f, hist_r = [], []
        else:
            f = f_next
            f_next, g = step(f)
        if not (np.all(np.isfinite(f_next)) and np.all(np.isfinite(g))):
            raise InstabilityError(reg, f"non-finite potentials at iteration {it}")
        err = step.column_error(f_next, g)
        if err < tol:
            return f_next, g, it, True, err
        if it % NEWTON_AFTER == 0 and sum(M.shape) <= NEWTON_MAX_SIZE and it < max_iter:
            f_n, g_n, k, err_n = _newton(M, a, b, reg, step, f_next, min(50, max_iter - it), tol)
            if err_n < tol:
                return f_n, g_n, it + k, True, err_n
            if err_n < err:
                # keep Newton's progress and carry on sweeping from there
                f, (f_next, g) = f_n, step(f_n)
                hist_f, hist_r = [], []
                err = err_n
    return f_next, g, max_iter, False, err


def entropy_term(gamma):
    """``Σ γ log γ`` with the convention ``0 log 0 = 0``."""
    pos = gamma > 0
    return float(np.sum(gamma[pos] * np.log(gamma[pos])))


def _sinkhorn_coupling(M, a, b, reg, max_iter, tol):
    """Full-size coupling; zero-mass rows and columns are left out of the solve."""
    rows, cols = np.flatnonzero(a > 0), np.flatnonzero(b > 0)
    sub = M[np.ix_(rows, cols)]
    f, g, it, converged, err = sinkhorn_potentials(sub, a[rows], b[cols], reg, max_iter, tol)
    gamma = np.zeros(M.shape)
    gamma[np.ix_(rows, cols)] = np.exp((f[:, None] + g[None, :] - sub) / reg)
    if not np.all(np.isfinite(gamma)):
        raise InstabilityError(reg, "coupling overflowed")
    return gamma, it, converged, err


def _validate(M, a, b, reg, max_iter):
    M = as_cost(M)
    n, m = M.shape
    if not reg > 0 or not np.isfinite(reg):
        raise ParameterError(f"reg must be positive and finite, got {reg!r}")
    if max_iter < 1:
        raise ParameterError("max_iter must be >= 1")
    a, b = check_marginals(a, b, n, m)
    if not a.sum() > 0:
        raise ParameterError("marginals carry no mass")
    return M, a, b


def solve_sinkhorn(M, a, b, reg=DEFAULT_REG, max_iter=DEFAULT_MAX_ITER, tol=DEFAULT_TOL):
    """Entropy-regularized OT, ``min <γ, M> + reg Σ γ log γ`` over U(a, b).

    Parameters
    ----------
    M : (n, m) array or CostMatrix
    a, b : (n,), (m,) arrays
        Marginals with equal total mass.
    reg : float
        Entropic regularization strength, > 0.
    max_iter : int
        Maximum number of row/column sweeps.
    tol : float
        Stopping threshold on the L1 marginal violation.

    Returns
    -------
    TransportResult
        ``objective`` is the transport cost ``<γ, M>`` (without the entropy);
        ``info["regularized_objective"]`` adds the entropy term.
        ``converged`` is False when ``max_iter`` is reached first.
    """
    M, a, b = _validate(M, a, b, reg, max_iter)
    gamma, it, converged, err = _sinkhorn_coupling(M, a, b, reg, max_iter, tol)
    cost = float(np.sum(gamma * M))
    info = {"reg": reg, "marginal_error": err,
            "regularized_objective": cost + reg * entropy_term(gamma)}
    return TransportResult(Coupling(gamma, a, b), cost, converged, it, "sinkhorn", info)
