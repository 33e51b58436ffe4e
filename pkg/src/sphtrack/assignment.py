"""Minimum-cost bipartite matching with a lexicographic tie-break.

The Hungarian method (shortest augmenting paths with row/column potentials)
runs on a square matrix in which every row and column may also stay unmatched.
Its potentials identify the "tight" edges whose reduced cost is zero; the
optimal matchings are exactly the perfect matchings that use tight edges only.
Among those, rows are fixed one at a time to their lowest-indexed feasible
column, each choice checked with a single augmenting-path search, which gives
the lexicographically smallest optimal pair list.
"""

from __future__ import annotations

import numpy as np

from .kernels import njit


@njit(cache=True)
def hungarian(a):
    """Optimal perfect matching of a square cost matrix.

    Returns ``(row_to_col, u, v)`` with ``a[i, j] - u[i] - v[j] >= 0`` for all
    pairs and equality on the matched ones.
    """
    n = a.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)      # p[j]: 1-based row matched to column j
    way = np.zeros(n + 1, dtype=np.int64)
    minv = np.empty(n + 1)
    used = np.zeros(n + 1, dtype=np.bool_)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv[:] = np.inf
        used[:] = False
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = np.inf
            j1 = 0
            for j in range(1, n + 1):
                if not used[j]:
                    cur = a[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    row_to_col = np.empty(n, dtype=np.int64)
    for j in range(1, n + 1):
        row_to_col[p[j] - 1] = j - 1
    return row_to_col, u[1:].copy(), v[1:].copy()


@njit(cache=True)
def _force_pair(i, j, match, colmatch, tight, locked_row, locked_col, parent, queue, seen):
    """Rewire the perfect matching so that row ``i`` takes column ``j``, if possible.

    Dropping ``i``'s current edge and ``j``'s current edge leaves one free row
    and one free column; a tight alternating path between them exists exactly
    when some tight perfect matching contains ``(i, j)``.
    """
    n = match.shape[0]
    r = colmatch[j]
    target = match[i]
    seen[:] = False
    head = 0
    tail = 1
    queue[0] = r
    found = False
    while head < tail and not found:
        row = queue[head]
        head += 1
        for c in range(n):
            if seen[c] or c == j or locked_col[c] or not tight[row, c]:
                continue
            seen[c] = True
            parent[c] = row
            if c == target:
                found = True
                break
            nxt = colmatch[c]
            if nxt != i and not locked_row[nxt]:
                queue[tail] = nxt
                tail += 1
    if not found:
        return False
    c = target
    while True:
        row = parent[c]
        prev = match[row]
        match[row] = c
        colmatch[c] = row
        if row == r:
            break
        c = prev
    match[i] = j
    colmatch[j] = i
    return True


@njit(cache=True)
def lexmin_matching(a, n_real_rows, n_real_cols, allowed, tol):
    """Lexicographically smallest optimal perfect matching of ``a``.

    Only the first ``n_real_rows`` rows and ``n_real_cols`` columns take part
    in the ordering; ``allowed`` marks the real pairs that count as matches.
    """
    n = a.shape[0]
    match, u, v = hungarian(a)
    colmatch = np.empty(n, dtype=np.int64)
    for i in range(n):
        colmatch[match[i]] = i
    tight = np.empty((n, n), dtype=np.bool_)
    for i in range(n):
        for j in range(n):
            tight[i, j] = a[i, j] - u[i] - v[j] <= tol
    locked_row = np.zeros(n, dtype=np.bool_)
    locked_col = np.zeros(n, dtype=np.bool_)
    parent = np.empty(n, dtype=np.int64)
    queue = np.empty(n, dtype=np.int64)
    seen = np.empty(n, dtype=np.bool_)
    for i in range(n_real_rows):
        cur = match[i]
        for j in range(n_real_cols):
            if j == cur:
                break
            if locked_col[j] or not allowed[i, j] or not tight[i, j]:
                continue
            if _force_pair(i, j, match, colmatch, tight, locked_row, locked_col, parent, queue, seen):
                break
        locked_row[i] = True
        locked_col[match[i]] = True
    return match


@njit(cache=True)
def _padded_problem(cost, feasible):
    """Square problem in which every row and column may also stay unmatched."""
    n, m = cost.shape
    lo = np.inf
    hi = -np.inf
    for i in range(n):
        for j in range(m):
            if feasible[i, j]:
                lo = min(lo, cost[i, j])
                hi = max(hi, cost[i, j])
    # leaving a row unmatched costs more than any cost difference a pair can make up
    big = min(n, m) * (hi - lo) + 1.0
    forbidden = 4.0 * (n + m + 1) * big
    N = n + m
    a = np.full((N, N), forbidden)
    allowed = np.zeros((N, N), dtype=np.bool_)
    for i in range(n):
        for j in range(m):
            if feasible[i, j]:
                a[i, j] = cost[i, j] - lo
                allowed[i, j] = True
        a[i, m + i] = big
    for j in range(m):
        a[n + j, j] = 0.0
        for k in range(n):
            a[n + j, m + k] = 0.0
    return a, allowed, 1e-11 * (big + 1.0)


def solve_lexmin(cost: np.ndarray, feasible: np.ndarray) -> list[tuple[int, int]]:
    """Maximum-cardinality, then minimum-cost, then lexicographically smallest matching.

    ``cost`` entries outside ``feasible`` are ignored; feasible entries must be
    finite.  Pairs are returned sorted by row.
    """
    n, m = cost.shape
    if n == 0 or m == 0 or not feasible.any():
        return []
    a, allowed, tol = _padded_problem(np.ascontiguousarray(cost, dtype=np.float64),
                                      np.ascontiguousarray(feasible))
    match = lexmin_matching(a, n, m, allowed, tol).tolist()
    return [(i, match[i]) for i in range(n) if match[i] < m]
