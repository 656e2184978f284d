"""Exact discrete optimal transport by the network (transportation) simplex.

The basis is a spanning tree of the bipartite graph rows ∪ columns with
n + m − 1 basic cells. Each pivot prices all cells at once with numpy and
then walks the tree in Python, which is fast enough for a few hundred points
per side.
"""

import math
from collections import deque

import numpy as np

from ..errors import NonConvergenceError, ParameterError
from .types import Coupling, TransportResult, as_cost, check_marginals

DEFAULT_MAX_ITER = 100_000
_REL_TOL = 1e-12


def _least_cost_basis(M, a, b):
    """Matrix-minimum starting basis; crosses out exactly one line per step.

    Returns the flow matrix and the list of n + m − 1 basic cells.
    """
    n, m = M.shape
    supply = a.astype(float).copy()
    demand = b.astype(float).copy()
    work = M.astype(float).copy()
    rows_left, cols_left = n, m
    flow = np.zeros((n, m))
    basis = []
    # ties are broken by flat index via argmin on the masked matrix
    while True:
        k = int(np.argmin(work))
        i, j = divmod(k, m)
        if rows_left == 1 and cols_left == 1:
            flow[i, j] += supply[i]
            basis.append((i, j))
            break
        q = min(supply[i], demand[j])
        flow[i, j] = q
        basis.append((i, j))
        cross_row = supply[i] < demand[j] or (supply[i] == demand[j] and rows_left > 1)
        if cols_left == 1:
            cross_row = True
        elif rows_left == 1:
            cross_row = False
        if cross_row:
            demand[j] -= supply[i]
            supply[i] = 0.0
            work[i, :] = np.inf
            rows_left -= 1
        else:
            supply[i] -= demand[j]
            demand[j] = 0.0
            work[:, j] = np.inf
            cols_left -= 1
    return flow, basis


class _Tree:
    """Spanning tree over nodes 0..n-1 (rows) and n..n+m-1 (columns).

    Keeps parent/depth pointers and node potentials (u for rows, v for
    columns) with u_i + v_j = M_ij on every basic cell.
    """

    def __init__(self, n, m, basis, M):
        self.n, self.m = n, m
        self.basis = list(basis)
        self.M = M
        N = n + m
        self.adj = [set() for _ in range(N)]
        for i, j in self.basis:
            self.adj[i].add(n + j)
            self.adj[n + j].add(i)
        self.parent = [-1] * N
        self.depth = [0] * N
        self.u = np.zeros(n)
        self.v = np.zeros(m)
        seen = self._grow(0, -1)
        if len(seen) != N:
            raise RuntimeError("basis is not a spanning tree")

    def _grow(self, start, stop):
        """BFS from ``start`` (never entering ``stop``) setting parent, depth, potentials."""
        n, M, u, v = self.n, self.M, self.u, self.v
        parent, depth, adj = self.parent, self.depth, self.adj
        seen = {start, stop}
        order = [start]
        queue = deque([start])
        while queue:
            p = queue.popleft()
            for q in adj[p]:
                if q in seen:
                    continue
                seen.add(q)
                parent[q] = p
                depth[q] = depth[p] + 1
                if p < n:
                    v[q - n] = M[p, q - n] - u[p]
                else:
                    u[q] = M[q, p - n] - v[p - n]
                order.append(q)
                queue.append(q)
        return order

    def _is_descendant(self, x, c):
        parent, depth = self.parent, self.depth
        while depth[x] > depth[c]:
            x = parent[x]
        return x == c

    def exchange(self, enter, leave):
        """Swap basic cell ``leave`` for ``enter`` and repair the detached subtree."""
        n = self.n
        p, q = leave[0], n + leave[1]
        c = q if self.parent[q] == p else p
        self.adj[p].discard(q)
        self.adj[q].discard(p)
        i, J = enter[0], n + enter[1]
        inner, outer = (i, J) if self._is_descendant(i, c) else (J, i)
        self.adj[i].add(J)
        self.adj[J].add(i)
        self.parent[inner] = outer
        self.depth[inner] = self.depth[outer] + 1
        if inner < n:
            self.u[inner] = self.M[inner, outer - n] - self.v[outer - n]
        else:
            self.v[inner - n] = self.M[outer, inner - n] - self.u[outer]
        self._grow(inner, outer)

    def cycle(self, i, j):
        """Tree path from column node of ``j`` to row ``i`` as (cell, sign) pairs.

        The entering cell (i, j) itself is not included; signs alternate
        starting with −1 at the column end.
        """
        n = self.n
        a, b = i, n + j
        path_a, path_b = [], []
        parent, depth = self.parent, self.depth
        while depth[a] > depth[b]:
            path_a.append(a)
            a = parent[a]
        while depth[b] > depth[a]:
            path_b.append(b)
            b = parent[b]
        while a != b:
            path_a.append(a)
            path_b.append(b)
            a, b = parent[a], parent[b]
        # walk from the column end up to the meeting node, then down to row i
        edges = [_cell(x, parent[x], n) for x in path_b]
        edges += [_cell(x, parent[x], n) for x in reversed(path_a)]
        return [(e, -1 if k % 2 == 0 else 1) for k, e in enumerate(edges)]


def _cell(x, y, n):
    return (x, y - n) if x < n else (y, x - n)


def network_simplex(M, a, b, max_iter=DEFAULT_MAX_ITER, block_size=None, bland_after=None):
    """Solve min <γ, M> over couplings with marginals a, b.

    Entering cells are chosen by block search over a cyclic candidate list
    (the most negative reduced cost within the first block that has one).
    After ``bland_after`` consecutive degenerate pivots the rule switches to
    Bland's (lowest index), which rules out cycling.

    Returns ``(flow, u, v, iterations, converged)``.
    """
    n, m = M.shape
    flow, basis = _least_cost_basis(M, a, b)
    tree = _Tree(n, m, basis, M)
    nm = n * m
    if block_size is None:
        block_size = max(int(math.sqrt(nm)), 10)
    if bland_after is None:
        bland_after = n + m
    flatM = M.ravel()
    absM = np.abs(flatM)
    rows = np.repeat(np.arange(n), m)
    cols = np.tile(np.arange(m), n)

    def price(lo, hi):
        r, c = rows[lo:hi], cols[lo:hi]
        u, v = tree.u[r], tree.v[c]
        red = flatM[lo:hi] - u - v
        tol = _REL_TOL * (absM[lo:hi] + np.abs(u) + np.abs(v) + 1.0)
        return red, red < -tol

    cursor = 0
    degenerate_run = 0
    bland = False
    it = 0
    while True:
        k = -1
        if bland:
            red, neg = price(0, nm)
            if neg.any():
                k = int(np.argmax(neg))
        else:
            start, scanned = cursor, 0
            while scanned < nm:
                stop = min(start + block_size, nm)
                red, neg = price(start, stop)
                scanned += stop - start
                if neg.any():
                    cand = np.flatnonzero(neg)
                    k = start + int(cand[np.argmin(red[cand])])
                    cursor = stop % nm
                    break
                start = stop % nm
        if k < 0:
            return flow, tree.u.copy(), tree.v.copy(), it, True
        if it >= max_iter:
            return flow, tree.u.copy(), tree.v.copy(), it, False
        it += 1
        i, j = divmod(k, m)

        path = tree.cycle(i, j)
        theta = math.inf
        leave = None
        for cell, sign in path:
            if sign < 0:
                f = flow[cell]
                if f < theta or (f == theta and cell < leave):
                    theta, leave = f, cell
        for cell, sign in path:
            flow[cell] += sign * theta
        flow[i, j] += theta
        flow[leave] = 0.0
        tree.exchange((i, j), leave)

        if theta == 0.0:
            degenerate_run += 1
            if degenerate_run > bland_after:
                bland = True
        else:
            degenerate_run = 0


def solve_emd(M, a, b, max_iter=DEFAULT_MAX_ITER):
    """Exact optimal transport between histograms ``a`` and ``b``.

    The returned coupling is a basic feasible solution with at most
    n + m − 1 nonzero entries. Raises NonConvergenceError when the pivot cap
    is hit.
    """
    M = as_cost(M)
    n, m = M.shape
    if n == 0 or m == 0:
        raise ParameterError("cost matrix must be non-empty")
    a, b = check_marginals(a, b, n, m)
    if b.sum() > 0:
        b = b * (a.sum() / b.sum())
    flow, u, v, iters, converged = network_simplex(M, a, b, max_iter=max_iter)
    if not converged:
        raise NonConvergenceError(f"network simplex hit the pivot cap ({max_iter})")
    flow = np.maximum(flow, 0.0)
    coupling = Coupling(flow, a, b)
    return TransportResult(coupling, float(np.sum(flow * M)), True, iters, "emd",
                           {"u": u, "v": v})
