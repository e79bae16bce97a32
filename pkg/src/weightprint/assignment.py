"""Rectangular maximum-weight linear assignment.

``solve_max_assignment`` runs a shortest-augmenting-path Hungarian method
(potentials over rows and columns, one Dijkstra-like sweep per row) on the
smaller side, then canonicalizes ties: among all optimal assignments it
returns the one whose row-sorted ``(row, col)`` list is lexicographically
smallest. ``brute_force_assignment`` enumerates every injection and applies
the same rule, which makes it a drop-in oracle for small instances.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from weightprint.errors import ValidationError

BRUTE_FORCE_LIMIT = 8

# Relative slack for treating two totals (or a reduced cost and zero) as tied.
TIE_RTOL = 1e-10


@dataclass(frozen=True)
class Assignment:
    """Matched ``(row, col)`` pairs sorted by row, and the sum of their weights."""

    matches: tuple[tuple[int, int], ...]
    total_weight: float

    @property
    def rows(self) -> np.ndarray:
        return np.array([r for r, _ in self.matches], dtype=np.int64)

    @property
    def cols(self) -> np.ndarray:
        return np.array([c for _, c in self.matches], dtype=np.int64)

    def as_dict(self) -> dict[int, int]:
        return dict(self.matches)


def _check_weights(weights) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 2 or w.shape[0] < 1 or w.shape[1] < 1:
        raise ValidationError(f"weights must be a non-empty 2-D matrix, got shape {w.shape}")
    if not np.all(np.isfinite(w)):
        raise ValidationError("weights contain non-finite entries")
    return w


def _tolerance(w: np.ndarray) -> float:
    return TIE_RTOL * max(1.0, float(np.max(np.abs(w))))


def _finish(w: np.ndarray, pairs) -> Assignment:
    matches = tuple(sorted((int(r), int(c)) for r, c in pairs))
    total = math.fsum(w[r, c] for r, c in matches)
    return Assignment(matches, total)


def _shortest_augmenting_path(cost: np.ndarray):
    """Min-cost assignment of every row of ``cost`` (n <= m).

    Returns ``(row_to_col, u, v)`` where ``u``/``v`` are dual potentials with
    ``u[i] + v[j] <= cost[i, j]``, equality on matched pairs, ``v <= 0`` and
    ``v[j] < 0`` only for matched columns.
    """
    n, m = cost.shape
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    owner = np.zeros(m + 1, dtype=np.int64)  # owner[j]: 1-based row on column j, 0 = free
    way = np.zeros(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        owner[0] = i
        j0 = 0
        minv = np.full(m + 1, np.inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = owner[j0]
            free = ~used
            free[0] = False
            reduced = cost[i0 - 1] - u[i0] - v[1:]
            better = free[1:] & (reduced < minv[1:])
            minv[1:][better] = reduced[better]
            way[1:][better] = j0
            candidates = np.where(free, minv, np.inf)
            j1 = int(np.argmin(candidates))
            delta = candidates[j1]
            used_cols = np.flatnonzero(used)
            u[owner[used_cols]] += delta
            v[used_cols] -= delta
            minv[free] -= delta
            j0 = j1
            if owner[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            owner[j0] = owner[j1]
            j0 = j1
    row_to_col = np.full(n, -1, dtype=np.int64)
    for j in range(1, m + 1):
        if owner[j]:
            row_to_col[owner[j] - 1] = j - 1
    return row_to_col, u[1:], v[1:]


class _TightGraph:
    """Square bipartite graph whose perfect matchings are exactly the optimal assignments.

    Left vertices are the ``n`` real rows plus ``m - n`` interchangeable dummy
    rows; a dummy may take any column whose dual is zero (an unmatched column
    with a negative dual would make the assignment suboptimal).
    """

    def __init__(self, tight: np.ndarray, optional_cols: np.ndarray, row_to_col: np.ndarray):
        n, m = tight.shape
        self.n, self.m = n, m
        self.adj = [list(np.flatnonzero(tight[i])) for i in range(n)]
        dummy_adj = list(np.flatnonzero(optional_cols))
        self.adj.extend(dummy_adj for _ in range(m - n))
        self.match = list(int(c) for c in row_to_col)  # left -> col
        free_cols = sorted(set(range(m)) - set(self.match))
        self.match.extend(free_cols)
        self.owner = [0] * m
        for left, col in enumerate(self.match):
            self.owner[col] = left
        self.fixed_left = [False] * m
        self.fixed_col = [False] * m

    def _find_path(self, start: int, target: int, banned_col: int):
        """Alternating path from left ``start`` to free column ``target`` avoiding fixed vertices."""
        visited = set()
        stack = [(start, iter(self.adj[start]))]
        trail: list[int] = []  # columns taken along the current path
        while stack:
            left, it = stack[-1]
            advanced = False
            for col in it:
                if col in visited or col == banned_col or self.fixed_col[col]:
                    continue
                nxt = self.owner[col]
                if col != target and self.fixed_left[nxt]:
                    continue
                visited.add(col)
                trail.append(col)
                if col == target:
                    return [s[0] for s in stack], trail
                stack.append((nxt, iter(self.adj[nxt])))
                advanced = True
                break
            if not advanced:
                stack.pop()
                if trail:
                    trail.pop()
        return None

    def force(self, left: int, col: int) -> bool:
        """Try to fix ``left -> col`` while keeping a perfect matching; apply it on success."""
        if self.match[left] == col:
            self.fixed_left[left] = self.fixed_col[col] = True
            return True
        if col not in self.adj[left] or self.fixed_col[col]:
            return False
        displaced = self.owner[col]
        vacated = self.match[left]
        self.fixed_left[left] = True
        found = self._find_path(displaced, vacated, banned_col=col)
        if found is None:
            self.fixed_left[left] = False
            return False
        lefts, cols = found
        for lft, c in zip(lefts, cols):
            self.match[lft] = c
            self.owner[c] = lft
        self.match[left] = col
        self.owner[col] = left
        self.fixed_col[col] = True
        return True


def _canonicalize(cost, row_to_col, u, v, tol, transposed):
    n, m = cost.shape
    reduced = cost - u[:, None] - v[None, :]
    tight = reduced <= tol
    if all(tight[i].sum() == 1 for i in range(n)):
        return row_to_col
    graph = _TightGraph(tight, v >= -tol, row_to_col)
    if not transposed:
        for row in range(n):
            for col in graph.adj[row]:
                if graph.force(row, col):
                    break
    else:
        # Solver columns are the caller's rows: give each, in order, the smallest
        # solver row it can keep, else leave it unmatched (owned by a dummy).
        dummies = range(n, m)
        for col in range(m):
            placed = False
            for row in range(n):
                if tight[row, col] and not graph.fixed_left[row] and graph.force(row, col):
                    placed = True
                    break
            if placed:
                continue
            if graph.owner[col] >= n:
                graph.force(graph.owner[col], col)
                continue
            for d in dummies:
                if not graph.fixed_left[d]:
                    graph.force(d, col)
                    break
    return np.array(graph.match[:n], dtype=np.int64)


def solve_max_assignment(weights) -> Assignment:
    """Maximum-weight assignment of size ``min(p, q)`` for a ``p x q`` matrix.

    Ties are broken deterministically: lowest row index first, then lowest
    column index.
    """
    w = _check_weights(weights)
    transposed = w.shape[0] > w.shape[1]
    cost = -(w.T if transposed else w)
    row_to_col, u, v = _shortest_augmenting_path(cost)
    row_to_col = _canonicalize(cost, row_to_col, u, v, _tolerance(w), transposed)
    pairs = [(i, j) for i, j in enumerate(row_to_col)]
    if transposed:
        pairs = [(j, i) for i, j in pairs]
    return _finish(w, pairs)


def brute_force_assignment(weights) -> Assignment:
    """Exhaustive maximum-weight assignment; only for ``min(p, q) <= 8``."""
    w = _check_weights(weights)
    p, q = w.shape
    if min(p, q) > BRUTE_FORCE_LIMIT:
        raise ValidationError(f"instance too large for brute force: min side {min(p, q)} > {BRUTE_FORCE_LIMIT}")
    if p <= q:
        candidates = [tuple(enumerate(cols)) for cols in itertools.permutations(range(q), p)]
    else:
        candidates = [tuple(sorted((r, c) for c, r in enumerate(rows))) for rows in itertools.permutations(range(p), q)]
    totals = [math.fsum(w[r, c] for r, c in pairs) for pairs in candidates]
    best = max(totals)
    tol = _tolerance(w)
    winner = min(pairs for pairs, total in zip(candidates, totals) if total >= best - tol)
    return _finish(w, winner)
