"""Dense two-phase simplex for the tiny equality-form LPs of the measure construction.

Bland's rule keeps the pivot sequence (and hence the optimizer returned)
deterministic and free of cycling.
"""
from __future__ import annotations

import numpy as np

TOL = 1e-12


class LPInfeasible(Exception):
    pass


class LPUnbounded(Exception):
    pass


def _pivot(T: np.ndarray, basis: list, r: int, c: int) -> None:
    T[r] /= T[r, c]
    col = T[:, c].copy()
    col[r] = 0.0
    T -= np.outer(col, T[r])
    basis[r] = c


def _run(T: np.ndarray, basis: list, n_cols: int) -> None:
    """Minimise the objective held in the last row of ``T`` over columns ``< n_cols``."""
    while True:
        reduced = T[-1, :n_cols]
        entering = np.flatnonzero(reduced < -TOL)
        if entering.size == 0:
            return
        c = int(entering[0])
        col = T[:-1, c]
        pos = col > TOL
        if not pos.any():
            raise LPUnbounded
        ratios = np.full(col.shape, np.inf)
        ratios[pos] = T[:-1, -1][pos] / col[pos]
        best = ratios.min()
        ties = np.flatnonzero(ratios <= best + TOL * max(1.0, abs(best)))
        r = int(min(ties, key=lambda i: basis[i]))
        _pivot(T, basis, r, c)


def solve_standard(c, A, b) -> tuple[np.ndarray, float]:
    """``min c.x`` subject to ``A x = b``, ``x >= 0``.  Returns ``(x, objective)``."""
    c = np.asarray(c, dtype=float)
    A = np.array(A, dtype=float)
    b = np.array(b, dtype=float)
    m, n = A.shape
    neg = b < 0
    A[neg] *= -1
    b[neg] *= -1
    # phase 1 with one artificial per row
    T = np.zeros((m + 1, n + m + 1))
    T[:m, :n] = A
    T[:m, n:n + m] = np.eye(m)
    T[:m, -1] = b
    T[-1, :n] = -A.sum(axis=0)
    T[-1, -1] = -b.sum()
    basis = list(range(n, n + m))
    _run(T, basis, n + m)
    if -T[-1, -1] > 1e-9 * max(1.0, np.abs(b).max(initial=0.0)):
        raise LPInfeasible
    # drive remaining artificials out of the basis; drop redundant rows
    keep = []
    for r in range(m):
        if basis[r] >= n:
            cand = np.flatnonzero(np.abs(T[r, :n]) > 1e-10)
            if cand.size == 0:
                continue
            _pivot(T, basis, r, int(cand[0]))
        keep.append(r)
    T = np.vstack([T[keep][:, list(range(n)) + [T.shape[1] - 1]], np.zeros(n + 1)])
    basis = [basis[r] for r in keep]
    # phase 2
    T[-1, :n] = c
    for r, j in enumerate(basis):
        T[-1] -= c[j] * T[r]
    _run(T, basis, n)
    x = np.zeros(n)
    for r, j in enumerate(basis):
        x[j] = T[r, -1]
    return x, float(c @ x)


def max_min_weights(points: np.ndarray) -> tuple[np.ndarray | None, float]:
    """Maximise ``t`` with weights ``w >= t``, ``sum w = 1``, ``sum w x = 0``.

    Uses ``w = s + t`` with ``s, t >= 0``.  Returns ``(None, -inf)`` when no
    non-negative weights reproduce zero.
    """
    m, d = points.shape
    A = np.zeros((d + 1, m + 1))
    A[0, :m] = 1.0
    A[0, m] = m
    A[1:, :m] = points.T
    A[1:, m] = points.sum(axis=0)
    b = np.zeros(d + 1)
    b[0] = 1.0
    c = np.zeros(m + 1)
    c[m] = -1.0
    try:
        x, _ = solve_standard(c, A, b)
    except LPInfeasible:
        return None, -np.inf
    t = x[m]
    return x[:m] + t, t
