"""Brute-force check of c-cyclical monotonicity under c(x, y) = ½‖x − y‖².

A pairing (x_n, x'_n) is cyclically monotone when every cycle of distinct
indices (n_1, ..., n_K) satisfies

    Σ_k c(x_{n_k}, x'_{n_k})  <=  Σ_k c(x_{n_k}, x'_{n_{k+1}}),   n_{K+1} = n_1.
"""

import csv
import itertools
import json
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .attack import epsilon_bound
from .errors import ParameterError, ScaleError
from .seeding import rng_for

EXHAUSTIVE_LIMIT = 10
DEFAULT_TOLERANCE = 1e-9


def quadratic_cost(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ParameterError(f"dimension mismatch: {x.shape} vs {y.shape}")
    d = x - y
    return 0.5 * float(np.dot(d.ravel(), d.ravel()))


def pairwise_quadratic_cost(x, y):
    """``C[i, j] = ½‖x_i − y_j‖²`` computed from explicit differences."""
    diff = x[:, None, :] - y[None, :, :]
    return 0.5 * np.einsum("ijk,ijk->ij", diff, diff)


@dataclass(frozen=True)
class ViolationReport:
    cycle: tuple
    lhs: float
    rhs: float

    @property
    def gap(self):
        return self.lhs - self.rhs

    def to_dict(self):
        return {"cycle": list(self.cycle), "lhs": self.lhs, "rhs": self.rhs, "gap": self.gap}

    def to_json(self):
        return json.dumps(self.to_dict())


@dataclass(frozen=True)
class Pairing:
    source: np.ndarray
    paired: np.ndarray

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.source, dtype=float))
        b = np.atleast_2d(np.asarray(self.paired, dtype=float))
        if a.shape != b.shape:
            raise ParameterError(f"pairing shapes differ: {a.shape} vs {b.shape}")
        object.__setattr__(self, "source", a)
        object.__setattr__(self, "paired", b)

    @property
    def size(self):
        return self.source.shape[0]


@lru_cache(maxsize=None)
def _cycles(n, k):
    """All cycles of ``k`` distinct indices from ``range(n)``, one per rotation class.

    Each cycle starts at its smallest index; rows are in lexicographic order.
    """
    rows = []
    for first in range(n):
        for rest in itertools.permutations(range(first + 1, n), k - 1):
            rows.append((first,) + rest)
    arr = np.array(rows, dtype=np.int64).reshape(-1, k)
    arr.setflags(write=False)
    return arr


def _canonical(cycle):
    cycle = tuple(int(v) for v in cycle)
    i = cycle.index(min(cycle))
    return cycle[i:] + cycle[:i]


def _evaluate(C, cycles):
    lhs = C[cycles, cycles].sum(axis=1)
    rhs = C[cycles, np.roll(cycles, -1, axis=1)].sum(axis=1)
    return lhs, rhs


def check_cycles(pairing, max_cycle_len=None, tolerance=DEFAULT_TOLERANCE, mode="exhaustive",
                 seed=0, count=10_000):
    """Search for a cycle violating monotonicity.

    Parameters
    ----------
    pairing : Pairing or (x, x') tuple
    max_cycle_len : int, optional
        Longest cycle tested; defaults to the number of pairs.
    tolerance : float
        A cycle counts as violating only when lhs − rhs exceeds this.
    mode : {"exhaustive", "sampled"}
        Exhaustive enumeration needs at most 10 pairs. Sampled mode draws
        ``count`` random cycles with lengths uniform in 2..max_cycle_len.

    Returns
    -------
    ViolationReport or None
        The lexicographically smallest violating cycle (in its rotation that
        starts at the smallest index), or None.
    """
    if not isinstance(pairing, Pairing):
        pairing = Pairing(*pairing)
    n = pairing.size
    if max_cycle_len is None:
        max_cycle_len = n
    if max_cycle_len < 2:
        raise ParameterError("max_cycle_len must be >= 2")
    max_cycle_len = min(max_cycle_len, n)
    if n < 2:
        return None
    C = pairwise_quadratic_cost(pairing.source, pairing.paired)

    found = []
    if mode == "exhaustive":
        if n > EXHAUSTIVE_LIMIT:
            raise ScaleError(f"exhaustive search over {n} pairs exceeds the limit of {EXHAUSTIVE_LIMIT}")
        for k in range(2, max_cycle_len + 1):
            cycles = _cycles(n, k)
            lhs, rhs = _evaluate(C, cycles)
            bad = np.flatnonzero(lhs - rhs > tolerance)
            if len(bad):
                # rows are lexicographic, so the first hit is the smallest of this length
                i = bad[0]
                found.append(ViolationReport(tuple(int(v) for v in cycles[i]), float(lhs[i]), float(rhs[i])))
    elif mode == "sampled":
        rng = rng_for(seed, "monotonicity.sampled")
        lengths = rng.integers(2, max_cycle_len + 1, size=count)
        for k in np.unique(lengths):
            m = int(np.sum(lengths == k))
            keys = rng.random((m, n))
            cycles = np.argsort(keys, axis=1)[:, :k]
            lhs, rhs = _evaluate(C, cycles)
            for i in np.flatnonzero(lhs - rhs > tolerance):
                found.append(ViolationReport(_canonical(cycles[i]), float(lhs[i]), float(rhs[i])))
    else:
        raise ParameterError(f"unknown mode {mode!r}")
    if not found:
        return None
    return min(found, key=lambda r: r.cycle)


def check_pairs(pairing, tolerance=DEFAULT_TOLERANCE):
    """Length-2 ("no crossing pairs") test, vectorised over all i < j."""
    if not isinstance(pairing, Pairing):
        pairing = Pairing(*pairing)
    C = pairwise_quadratic_cost(pairing.source, pairing.paired)
    d = np.diag(C)
    gap = d[:, None] + d[None, :] - C - C.T
    iu = np.triu_indices(pairing.size, 1)
    bad = np.flatnonzero(gap[iu] > tolerance)
    if not len(bad):
        return None
    i, j = iu[0][bad[0]], iu[1][bad[0]]
    return ViolationReport((int(i), int(j)), float(d[i] + d[j]), float(C[i, j] + C[j, i]))


def random_perturbation(points, radius, rng, exact=False):
    """Displace every row by a uniformly random direction.

    With ``exact`` every displacement has norm ``radius``; otherwise the norm
    is uniform in [0, radius].
    """
    n, d = points.shape
    u = rng.normal(size=(n, d))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    r = np.full((n, 1), radius) if exact else radius * rng.random((n, 1))
    return points + r * u


@dataclass(frozen=True)
class ScanRow:
    multiplier: float
    violation_rate: float


def lemma_bound_sharpness_scan(points, multipliers, trials, seed, max_cycle_len=None,
                               sampled_count=2_000):
    """Violation rate of random radius-(m · bound) perturbations, per multiplier m.

    Uses exhaustive cycle enumeration for at most 8 points, sampled cycles
    beyond that.
    """
    points = np.asarray(points, dtype=float)
    multipliers = [float(m) for m in multipliers]
    if any(not m > 0 for m in multipliers):
        raise ParameterError("multipliers must be positive")
    if trials < 1:
        raise ParameterError("trials must be >= 1")
    bound = epsilon_bound(points)
    n = points.shape[0]
    mode = "exhaustive" if n <= 8 else "sampled"
    rows = []
    for m in multipliers:
        rng = rng_for(seed, "monotonicity.scan", repr(m))
        hits = 0
        for t in range(trials):
            moved = random_perturbation(points, m * bound, rng, exact=True)
            report = check_cycles(Pairing(points, moved), max_cycle_len, mode=mode,
                                  seed=int(rng.integers(2**31)), count=sampled_count)
            hits += report is not None
        rows.append(ScanRow(m, hits / trials))
    return rows


def write_scan_csv(rows, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["multiplier", "violation_rate"])
        for row in rows:
            writer.writerow([repr(row.multiplier), repr(row.violation_rate)])


def lemma_trial(n, dim, rng, radius_fraction=1.0):
    """One random instance for the small-perturbation property.

    Draws ``n`` distinct points and perturbs each by at most
    ``radius_fraction`` times the monotonicity bound.
    """
    points = rng.normal(size=(n, dim))
    bound = epsilon_bound(points)
    return points, random_perturbation(points, radius_fraction * bound, rng)
