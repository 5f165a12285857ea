"""Band-exit skeleton of a price process and the perturbed discrete process X.

The skeleton samples the price at the first grid times at which some
coordinate leaves the multiplicative band ``(1/(1+e), 1+e)`` around the
previous sample.  On the scenarios that never leave the band again, the
increment is replaced by a small move ``+-delta e_i`` selected by the size of
the remaining excursion, which puts zero inside the support of every
conditional increment law.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .model import ConsistencyError, PricePath, ScenarioTree, max_norm

NO_CLASS = 0


def running_sup_deviation(path, from_index: int) -> float:
    """``max_{u >= from_index} ||S_u - S_{from_index}||`` in the max-norm."""
    values = path.values if isinstance(path, PricePath) else np.asarray(path, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    n = values.shape[0]
    if not 0 <= from_index < n:
        raise IndexError(f"from_index {from_index} outside grid of {n} points")
    return max_norm(values[from_index:] - values[from_index])


def _sup_deviation_from(S: np.ndarray, anchor: np.ndarray) -> np.ndarray:
    """Row-wise ``S*`` from per-row anchor indices; ``S`` has shape (L, N+1, d)."""
    L, n1, _ = S.shape
    rows = np.arange(L)
    base = S[rows, anchor]
    future = np.arange(n1)[None, :] >= anchor[:, None]
    dev = np.abs(S - base[:, None, :]).max(axis=2)
    return np.where(future, dev, 0.0).max(axis=1)


def _first_exit(S: np.ndarray, anchor: np.ndarray, eps: float) -> tuple[np.ndarray, np.ndarray]:
    """First grid index after ``anchor`` where some ratio leaves the open band."""
    L, n1, _ = S.shape
    rows = np.arange(L)
    ratio = S / S[rows, anchor][:, None, :]
    outside = ((ratio <= 1.0 / (1.0 + eps)) | (ratio >= 1.0 + eps)).any(axis=2)
    outside &= np.arange(n1)[None, :] > anchor[:, None]
    exited = outside.any(axis=1)
    tau = np.where(exited, outside.argmax(axis=1), n1 - 1)
    return tau, exited


def compute_tau_sequence(path, eps_working: float) -> np.ndarray:
    """Band-exit indices ``0 = tau_0 < tau_1 < ... < tau_K = N`` of a single path."""
    values = path.values if isinstance(path, PricePath) else np.asarray(path, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    S = values[None]
    N = values.shape[0] - 1
    taus = [0]
    while taus[-1] < N:
        tau, _ = _first_exit(S, np.array([taus[-1]]), eps_working)
        taus.append(int(tau[0]))
    return np.array(taus)


def compute_delta(anchor_price, s_bar, eps_working: float):
    """``min(e/(1+e) S^1, ..., e/(1+e) S^d, s_bar)``; broadcasts over leading axes."""
    anchor_price = np.asarray(anchor_price, dtype=float)
    band = eps_working / (1.0 + eps_working) * anchor_price.min(axis=-1)
    out = np.minimum(band, s_bar)
    return float(out) if np.ndim(out) == 0 else out


def classify_C(s_star, delta, d: int, tau_n_is_T, s_bar):
    """Bucket index ``i`` with ``s_star in [(i-1) delta/(2d+1), i delta/(2d+1))``.

    Returns 0 (no class) when ``s_bar == 0`` or ``s_star >= delta``.  Works on
    scalars or aligned arrays.  A classified scenario that left the band is an
    internal inconsistency and raises :class:`ConsistencyError`.
    """
    s_star, delta, s_bar = np.broadcast_arrays(*map(np.asarray, (s_star, delta, s_bar)))
    tau_n_is_T = np.broadcast_to(np.asarray(tau_n_is_T, dtype=bool), s_star.shape)
    m = 2 * d + 1
    k = np.arange(m + 1)
    bounds = k[None, :] / m * delta.reshape(-1, 1)
    bounds[:, -1] = delta.reshape(-1)
    flat = s_star.reshape(-1)
    cls = (flat[:, None] >= bounds[:, :-1]).sum(axis=1)
    cls = np.where(flat < delta.reshape(-1), cls, NO_CLASS)
    cls = np.where(s_bar.reshape(-1) > 0, cls, NO_CLASS).reshape(s_star.shape)
    bad = (cls != NO_CLASS) & ~tau_n_is_T
    if np.any(bad):
        raise ConsistencyError(
            "scenario classified into a perturbation bucket but it left the band")
    return int(cls) if cls.ndim == 0 else cls


def class_increment(c_class, delta, d: int) -> np.ndarray:
    """Perturbation vector: ``+delta e_i`` for class ``2i``, ``-delta e_i`` for ``2i+1``."""
    c_class = np.atleast_1d(np.asarray(c_class))
    delta = np.broadcast_to(np.asarray(delta, dtype=float), c_class.shape)
    out = np.zeros(c_class.shape + (d,))
    for i in range(1, d + 1):
        out[c_class == 2 * i, i - 1] = delta[c_class == 2 * i]
        out[c_class == 2 * i + 1, i - 1] = -delta[c_class == 2 * i + 1]
    return out


def compute_xi(s_prev, s_next, exited: bool, c_class: int, delta: float, perturb: bool = True):
    """Increment of X for one scenario at one level.

    ``exited`` marks that the band was left at the new stopping index; the
    increment is then the price change.  Otherwise the class decides the
    perturbation (zero for class 1 and for unclassified scenarios).
    """
    s_prev = np.asarray(s_prev, dtype=float)
    if exited:
        return np.asarray(s_next, dtype=float) - s_prev
    if not perturb:
        return np.zeros_like(s_prev)
    return class_increment(c_class, delta, s_prev.shape[-1])[0]


@dataclass(frozen=True)
class SkeletonLevel:
    """Level ``n`` of the skeleton: arrays over scenarios and over skeleton nodes.

    Scenario arrays (length L): ``tau_prev``, ``tau_next``, ``exited``,
    ``s_star``, ``c_class``, ``xi`` (L, d), ``x`` (L, d) and ``node``, the
    index of the scenario's skeleton node.  Node arrays: ``anchor_node`` (tree
    node id at ``tau_{n-1}``, or -1 for path ensembles), ``anchor_price``,
    ``s_bar``, ``delta``.
    """

    n: int
    tau_prev: np.ndarray
    tau_next: np.ndarray
    exited: np.ndarray
    s_star: np.ndarray
    c_class: np.ndarray
    xi: np.ndarray
    x: np.ndarray
    node: np.ndarray
    anchor_node: np.ndarray
    anchor_price: np.ndarray
    s_bar: np.ndarray
    delta: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.s_bar)

    def members(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.node == k)

    @property
    def tau_n_is_T(self) -> np.ndarray:
        return ~self.exited


@dataclass(frozen=True)
class SkeletonNode:
    level: int
    index: int
    anchor_node: int
    members: np.ndarray
    anchor_price: np.ndarray
    s_bar: float
    delta: float
    s_star: np.ndarray
    c_class: np.ndarray
    xi: np.ndarray
    tau_n_is_T: np.ndarray


@dataclass(frozen=True)
class SkeletonDecomposition:
    eps_working: float
    d: int
    N: int
    x0: np.ndarray
    levels: tuple
    prob: np.ndarray
    perturb: bool = True
    overshoot: float = 0.0

    @property
    def n_scenarios(self) -> int:
        return len(self.prob)

    @property
    def K(self) -> int:
        return len(self.levels)

    def nodes(self, level: int):
        lv = self.levels[level - 1]
        for k in range(lv.n_nodes):
            m = lv.members(k)
            yield SkeletonNode(lv.n, k, int(lv.anchor_node[k]), m, lv.anchor_price[k],
                               float(lv.s_bar[k]), float(lv.delta[k]), lv.s_star[m],
                               lv.c_class[m], lv.xi[m], ~lv.exited[m])

    @property
    def taus(self) -> np.ndarray:
        """Stopping indices per scenario, shape (L, K + 1)."""
        cols = [np.zeros(self.n_scenarios, dtype=np.int64)]
        cols += [lv.tau_next for lv in self.levels]
        return np.stack(cols, axis=1)

    @property
    def X(self) -> np.ndarray:
        """X trajectories per scenario, shape (L, K + 1, d)."""
        cols = [self.x0] + [lv.x for lv in self.levels]
        return np.stack(cols, axis=1)

    @property
    def x_terminal(self) -> np.ndarray:
        return self.levels[-1].x if self.levels else self.x0


def _one_step_overshoot(S: np.ndarray) -> float:
    if S.shape[1] < 2:
        return 0.0
    r = S[:, 1:] / S[:, :-1]
    return float(np.max(np.maximum(r, 1.0 / r)) - 1.0)


def _build_levels(S: np.ndarray, prob: np.ndarray, eps: float, group: Callable,
                  perturb: bool, max_levels: int | None = None) -> tuple:
    """Shared level recursion.

    ``group(anchor, s_star)`` returns ``(node_of_scenario, anchor_node_ids,
    s_bar_per_node)`` for the current anchors.
    """
    L, n1, d = S.shape
    N = n1 - 1
    rows = np.arange(L)
    anchor = np.zeros(L, dtype=np.int64)
    x = S[:, 0, :].copy()
    levels = []
    n = 0
    while np.any(anchor < N):
        n += 1
        if max_levels is not None and n > max_levels:
            raise ConsistencyError("skeleton did not terminate")
        tau = np.full(L, N, dtype=np.int64)
        exited = np.zeros(L, dtype=bool)
        s_star = np.zeros(L)
        live = np.flatnonzero(anchor < N)
        if len(live) == L:
            tau, exited = _first_exit(S, anchor, eps)
            s_star = _sup_deviation_from(S, anchor)
        else:
            # absorbed scenarios keep tau = N, no exit and S* = 0
            tau[live], exited[live] = _first_exit(S[live], anchor[live], eps)
            s_star[live] = _sup_deviation_from(S[live], anchor[live])
        node, anchor_ids, s_bar = group(anchor, s_star)
        anchor_price = np.zeros((len(s_bar), d))
        anchor_price[node] = S[rows, anchor]
        delta = compute_delta(anchor_price, s_bar, eps)
        delta = np.atleast_1d(delta)
        c_class = classify_C(s_star, delta[node], d, ~exited, s_bar[node])
        xi = np.where(exited[:, None], S[rows, tau] - S[rows, anchor], 0.0)
        if perturb:
            xi = xi + class_increment(c_class, delta[node], d)
        x = x + xi
        levels.append(SkeletonLevel(
            n, anchor.copy(), tau, exited, s_star, c_class, xi, x.copy(),
            node, anchor_ids, anchor_price, s_bar, delta))
        anchor = tau
    return tuple(levels)


def build_skeleton(tree: ScenarioTree, eps_working: float, perturb: bool = True) -> SkeletonDecomposition:
    """Skeleton decomposition of a scenario tree.

    Skeleton nodes at level ``n`` are the tree nodes occupied at
    ``tau_{n-1}``; on a tree the node identifies the whole history, so the
    conditional support maximum ``s_bar`` is the largest ``S*`` among the
    node's scenarios.  ``perturb=False`` drops the ``+-delta e_i`` term.
    """
    S = tree.scenario_prices
    paths = tree.scenario_paths
    prob = tree.leaf_prob
    rows = np.arange(S.shape[0])

    def group(anchor, s_star):
        ids = paths[rows, anchor]
        anchor_ids, node = np.unique(ids, return_inverse=True)
        s_bar = np.zeros(len(anchor_ids))
        np.maximum.at(s_bar, node, s_star)
        return node, anchor_ids, s_bar

    levels = _build_levels(S, prob, eps_working, group, perturb, max_levels=tree.depth + 1)
    return SkeletonDecomposition(eps_working, tree.d, tree.depth, S[:, 0].copy(), levels,
                                 np.asarray(prob), perturb, _one_step_overshoot(S))


def sup_deviation_table(values: np.ndarray) -> np.ndarray:
    """``S*`` from every grid index for every path, shape (P, N+1).

    Uses suffix maxima and minima, so the cost is linear in the grid size.
    """
    suf_max = np.maximum.accumulate(values[:, ::-1], axis=1)[:, ::-1]
    suf_min = np.minimum.accumulate(values[:, ::-1], axis=1)[:, ::-1]
    return np.maximum(suf_max - values, values - suf_min).max(axis=2)


def ensemble_skeleton(ensemble, eps_working: float, s_bar="bundle", radius: float = np.inf,
                      perturb: bool = True) -> SkeletonDecomposition:
    """Per-path skeletons for an ensemble without tree structure.

    The conditional support maximum is not observable from one path, so
    ``s_bar`` is a plug-in:

    * a float, used for every path and level;
    * a callable ``f(anchor_index, s_star) -> array`` returning one value per path;
    * ``"bundle"``: the largest ``S*`` from the same anchor index among paths
      whose history up to the anchor is within ``radius`` (sup over time of
      the max-norm distance).  ``radius=inf`` pools the whole ensemble.

    Every path is its own skeleton node.
    """
    S = ensemble.values
    P = S.shape[0]
    prob = (np.full(P, 1.0 / P) if ensemble.weights is None
            else ensemble.weights / ensemble.weights.sum())
    table = sup_deviation_table(S) if isinstance(s_bar, str) else None
    if isinstance(s_bar, str) and s_bar != "bundle":
        raise ValueError(f"unknown s_bar rule {s_bar!r}")

    def plug_in(anchor, s_star):
        if callable(s_bar):
            return np.asarray(s_bar(anchor, s_star), dtype=float)
        if not isinstance(s_bar, str):
            return np.full(P, float(s_bar))
        col_max = table.max(axis=0)
        if np.isinf(radius):
            return col_max[anchor]
        out = np.empty(P)
        for p in range(P):
            a = anchor[p]
            dist = np.abs(S[:, : a + 1] - S[p, : a + 1]).max(axis=(1, 2))
            out[p] = table[dist <= radius, a].max()
        return out

    def group(anchor, s_star):
        sb = np.maximum(plug_in(anchor, s_star), 0.0)
        # a plug-in can never fall below the path's own excursion
        sb = np.maximum(sb, s_star)
        return np.arange(P), np.full(P, -1), sb

    levels = _build_levels(S, prob, eps_working, group, perturb, max_levels=S.shape[1] + 1)
    return SkeletonDecomposition(eps_working, S.shape[2], S.shape[1] - 1, S[:, 0].copy(), levels,
                                 prob, perturb, _one_step_overshoot(S))

