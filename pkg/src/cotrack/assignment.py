"""Optimal one-to-one assignment with deterministic tie-breaking.

The solver is the O(n^3) shortest-augmenting-path Hungarian algorithm.
Rectangular matrices are padded to square with a large finite sentinel so
all arithmetic stays finite; padded pairings carry a constant total offset
and therefore never distort which real pairs are chosen.

Among equally cheap assignments the result is pinned: scanning rows upward,
each row takes the lowest column index compatible with some minimum-cost
completion. The refinement runs on the zero-reduced-cost subgraph left by
the main solve, so it costs nothing when the optimum is unique.
"""

from __future__ import annotations

from typing import List, Tuple

import numpy as np


def solve_assignment(cost) -> List[Tuple[int, int]]:
    """Minimum-cost one-to-one assignment of rows to columns.

    Args:
        cost: n x m array-like of finite reals.

    Returns:
        List of (row, col) pairs of size min(n, m), sorted by row, with
        globally minimal total cost. Ties break toward the lowest row
        index, then the lowest column index. An empty matrix yields an
        empty assignment.

    Raises:
        ValueError: on non-finite entries or a non-2D input.
    """
    matrix = np.asarray(cost, dtype=float)
    if matrix.ndim != 2:
        raise ValueError(f"cost matrix must be 2-D, got shape {matrix.shape}")
    n, m = matrix.shape
    if n == 0 or m == 0:
        return []
    if not np.all(np.isfinite(matrix)):
        raise ValueError("cost matrix entries must be finite")

    k = max(n, m)
    scale = max(1.0, float(np.abs(matrix).max()))
    sentinel = scale * k + 1.0
    square = np.full((k, k), sentinel)
    square[:n, :m] = matrix

    col_of_row, u, v = _hungarian_square(square)
    col_of_row = _lexicographic_refine(square, col_of_row, u, v, scale, real_rows=n)
    return [(r, int(c)) for r, c in enumerate(col_of_row) if r < n and c < m]


def _hungarian_square(a: np.ndarray):
    """Solve a square assignment problem, returning (col_of_row, u, v).

    Potentials satisfy a[i, j] - u[i] - v[j] >= 0 with equality on matched
    pairs, up to floating rounding.
    """
    k = a.shape[0]
    # 1-based arrays with a virtual column 0, classic formulation.
    cost = np.zeros((k + 1, k + 1))
    cost[1:, 1:] = a
    u = np.zeros(k + 1)
    v = np.zeros(k + 1)
    match = np.zeros(k + 1, dtype=int)  # match[j] = row currently matched to column j
    way = np.zeros(k + 1, dtype=int)

    for i in range(1, k + 1):
        match[0] = i
        j0 = 0
        minv = np.full(k + 1, np.inf)
        used = np.zeros(k + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = match[j0]
            free = ~used
            free[0] = False
            cur = cost[i0] - u[i0] - v
            improves = free & (cur < minv)
            minv[improves] = cur[improves]
            way[improves] = j0
            candidates = np.where(free, minv, np.inf)
            j1 = int(np.argmin(candidates))  # lowest column index wins ties
            delta = candidates[j1]
            u[match[used]] += delta
            v[used] -= delta
            minv[free] -= delta
            j0 = j1
            if match[j0] == 0:
                break
        while j0 != 0:
            j1 = way[j0]
            match[j0] = match[j1]
            j0 = j1

    col_of_row = np.empty(k, dtype=int)
    col_of_row[match[1:] - 1] = np.arange(k)
    return col_of_row, u[1:], v[1:]


def _lexicographic_refine(
    square: np.ndarray, col_of_row: np.ndarray, u, v, scale: float, real_rows: int
):
    """Pick the row-by-row lowest-column optimum among tied solutions.

    Every minimum-cost assignment lives in the zero-reduced-cost subgraph of
    the final potentials, so feasibility checks are bipartite matchings
    there. Only real rows are refined; the padding rows' columns never reach
    the output, and their all-equal costs would make the walk quadratic.
    """
    k = square.shape[0]
    eps = 1e-9 * max(1.0, scale)
    reduced = square - u[:, None] - v[None, :]
    zero_adj = [np.flatnonzero(reduced[r] <= eps) for r in range(k)]

    match_col = [int(c) for c in col_of_row]
    taken = set()
    for r in range(min(real_rows, k)):
        current = match_col[r]
        for c in zero_adj[r]:
            c = int(c)
            if c >= current:
                break
            if c in taken:
                continue
            rematch = _perfect_matching(zero_adj, k, r, taken, c)
            if rematch is not None:
                match_col[r] = c
                for rr in range(r + 1, k):
                    match_col[rr] = rematch[rr]
                break
        taken.add(match_col[r])
    return match_col


def _perfect_matching(zero_adj, k: int, fixed_row: int, taken: set, forced_col: int):
    """Try to match rows fixed_row+1..k-1 to free zero-columns (Kuhn's DFS).

    Returns {row: col} on success, None when no perfect completion exists.
    """
    blocked = taken | {forced_col}
    owner = {}  # col -> row

    def try_row(r, visited) -> bool:
        for c in zero_adj[r]:
            c = int(c)
            if c in blocked or c in visited:
                continue
            visited.add(c)
            if c not in owner or try_row(owner[c], visited):
                owner[c] = r
                return True
        return False

    for r in range(fixed_row + 1, k):
        if not try_row(r, set()):
            return None
    return {r: c for c, r in owner.items()}
