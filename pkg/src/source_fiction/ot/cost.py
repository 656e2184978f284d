import numpy as np
from scipy.spatial.distance import cdist

from ..errors import ParameterError
from .types import CostMatrix

DEFAULT_PENALTY_FACTOR = 1e6


def sqeuclidean_half(x, y):
    """``½‖x_i − y_j‖²`` for all row pairs."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 2 or y.ndim != 2 or x.shape[1] != y.shape[1]:
        raise ParameterError(f"feature dimensions differ: {x.shape} vs {y.shape}")
    return 0.5 * cdist(x, y, "sqeuclidean")


def label_pair_masks(x_labels, y_labels, n, m):
    """Boolean masks (same, different) over pairs where both sides are labeled."""
    xl = np.full(n, -1) if x_labels is None else np.asarray(x_labels).reshape(-1)
    yl = np.full(m, -1) if y_labels is None else np.asarray(y_labels).reshape(-1)
    if xl.shape != (n,) or yl.shape != (m,):
        raise ParameterError("label arrays must match the number of rows")
    both = (xl[:, None] >= 0) & (yl[None, :] >= 0)
    same = both & (xl[:, None] == yl[None, :])
    return same, both & ~same


def apply_label_penalty(base, x_labels, y_labels, penalty=None):
    n, m = base.shape
    same, diff = label_pair_masks(x_labels, y_labels, n, m)
    if not (same.any() or diff.any()):
        return base, None
    top = float(base.max()) if base.size else 0.0
    if penalty is None:
        penalty = DEFAULT_PENALTY_FACTOR * top if top > 0 else DEFAULT_PENALTY_FACTOR
    elif not penalty > top:
        raise ParameterError(f"penalty {penalty!r} must exceed the largest base cost {top!r}")
    M = base.copy()
    M[same] = 0.0
    M[diff] = penalty
    return M, float(penalty)


def build_cost(x, y, x_labels=None, y_labels=None, penalty=None):
    """Half squared Euclidean cost with optional semi-supervised label penalty.

    Where both ``x_i`` and ``y_j`` carry a label (``>= 0``) the entry becomes
    0 for equal labels and ``penalty`` otherwise. The penalty defaults to
    1e6 times the largest base cost and must exceed it.
    """
    base = sqeuclidean_half(x, y)
    M, used = apply_label_penalty(base, x_labels, y_labels, penalty)
    return CostMatrix(M, "sqeuclidean/2", used)
