"""Exact stickiness checks on scenario trees and Monte Carlo estimates on ensembles.

All probabilities reported for trees are sums of products of edge
probabilities, so they are exact up to floating-point rounding.  Ensemble
estimates come with a binomial standard error.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .model import ConfigurationError, PathEnsemble, ScenarioTree
from .skeleton import SkeletonDecomposition, sup_deviation_table

# flags
OK = "ok"
ZERO = "zero"
VACUOUS = "vacuous"
UNDETERMINED = "undetermined"


class MeasurabilityError(ValueError):
    """A stopping or radius rule looks into the future of the tree filtration."""


@dataclass(frozen=True)
class StickinessCell:
    cell_id: str
    kind: str
    probability: float
    stderr: float
    flag: str
    n: int = 0
    hits: float = float("nan")


@dataclass(frozen=True)
class StickinessReport:
    cells: tuple

    @property
    def passed(self) -> bool:
        """No cell has probability zero (undetermined cells do not count as failures)."""
        return all(c.flag != ZERO for c in self.cells)

    @property
    def zero_cells(self) -> list:
        return [c for c in self.cells if c.flag == ZERO]

    def __len__(self) -> int:
        return len(self.cells)

    def __getitem__(self, cell_id: str) -> StickinessCell:
        for c in self.cells:
            if c.cell_id == cell_id:
                return c
        raise KeyError(cell_id)


def _exact_cell(cell_id, kind, p, active=True) -> StickinessCell:
    if not active:
        return StickinessCell(cell_id, kind, float(p), 0.0, VACUOUS)
    return StickinessCell(cell_id, kind, float(p), 0.0, OK if p > 0 else ZERO)


def check_tree_sticky(tree: ScenarioTree):
    """Every non-terminal node needs a positive-probability child at the same price.

    Returns ``(True, {node: freeze_child})`` or ``(False, first_bad_node)``,
    scanning nodes in depth-first order from the root.
    """
    witness = {}
    for k in tree.topological_order:
        k = int(k)
        kids = tree.children[k]
        if not kids:
            continue
        freeze = next((c for c, p in kids
                       if p > 0 and np.array_equal(tree.prices[c], tree.prices[k])), None)
        if freeze is None:
            return False, k
        witness[k] = freeze
    return True, witness


def _rule_values(rule, tree: ScenarioTree, dtype, *extra) -> np.ndarray:
    L = len(tree.leaves)
    if callable(rule):
        S = tree.scenario_prices
        vals = [rule(S[r], *(e[r] for e in extra)) for r in range(L)]
    else:
        vals = np.broadcast_to(np.asarray(rule), (L,))
    return np.asarray(vals, dtype=dtype)


def _check_stopping_time(tree: ScenarioTree, tau: np.ndarray) -> None:
    paths = tree.scenario_paths
    N = tree.depth
    if np.any((tau < 0) | (tau > N)):
        raise MeasurabilityError(f"stopping indices must lie in [0, {N}]")
    for t in range(N + 1):
        hit = tau == t
        # {tau = t} must be a union of whole subtrees rooted at depth t
        nodes, inv = np.unique(paths[:, t], return_inverse=True)
        lo = np.ones(len(nodes), dtype=bool)
        hi = np.zeros(len(nodes), dtype=bool)
        np.logical_and.at(lo, inv, hit)
        np.logical_or.at(hi, inv, hit)
        bad = np.flatnonzero(lo != hi)
        if bad.size:
            raise MeasurabilityError(
                f"stopping rule splits node {int(nodes[bad[0]])} at time {t}")


def check_strong_stickiness(tree: ScenarioTree, stopping_rule, radius_rule) -> StickinessReport:
    """Exact ``P[S*_tau < eta | node at tau]`` for every stopping node with ``eta > 0``.

    ``stopping_rule`` is either an integer array with one index per scenario
    (rows of ``tree.scenario_paths``) or a callable ``f(prices) -> int`` on
    a scenario's ``(N+1, d)`` trajectory.  ``radius_rule`` is an array per
    scenario or a callable ``g(prices, tau) -> float``.  Both must be
    measurable with respect to the tree filtration, otherwise
    :class:`MeasurabilityError` is raised.
    """
    paths = tree.scenario_paths
    rows = np.arange(paths.shape[0])
    tau = _rule_values(stopping_rule, tree, np.int64)
    _check_stopping_time(tree, tau)
    eta = _rule_values(radius_rule, tree, float, tau)
    stop_node = paths[rows, tau]
    nodes, inv = np.unique(stop_node, return_inverse=True)
    eta_node = np.full(len(nodes), np.nan)
    eta_node[inv] = eta
    if np.any(eta_node[inv] != eta):
        k = int(nodes[inv[np.flatnonzero(eta_node[inv] != eta)[0]]])
        raise MeasurabilityError(f"radius rule is not constant at stopping node {k}")
    if np.any(eta < 0) or np.any(np.isnan(eta)):
        raise ConfigurationError("radii must be non-negative numbers")

    s_star = sup_deviation_table(tree.scenario_prices)[rows, tau]
    prob = tree.leaf_prob
    inside = np.zeros(len(nodes))
    total = np.zeros(len(nodes))
    np.add.at(total, inv, prob)
    np.add.at(inside, inv, np.where(s_star < eta, prob, 0.0))
    cells = []
    for j, k in enumerate(nodes):
        cid = f"node:{int(k)}@t={int(tree.time_index[k])}"
        cells.append(_exact_cell(cid, "strong", inside[j] / total[j], eta_node[j] > 0))
    return StickinessReport(tuple(cells))


def check_lemma_prob(skeleton: SkeletonDecomposition) -> StickinessReport:
    """Exact conditional probability of each class ``1..2d+1`` at skeleton nodes with ``s_bar > 0``."""
    m = 2 * skeleton.d + 1
    prob = skeleton.prob
    cells = []
    for lv in skeleton.levels:
        total = np.zeros(lv.n_nodes)
        np.add.at(total, lv.node, prob)
        by_class = np.zeros((lv.n_nodes, m + 1))
        np.add.at(by_class, (lv.node, lv.c_class), prob)
        for k in np.flatnonzero(lv.s_bar > 0):
            tag = f"level:{lv.n}/node:{int(lv.anchor_node[k])}"
            for i in range(1, m + 1):
                cells.append(_exact_cell(f"{tag}/class:{i}", "lemma", by_class[k, i] / total[k]))
    return StickinessReport(tuple(cells))


def bundle_paths(ensemble: PathEnsemble, t: int, bundling="global", radius: float | None = None):
    """Bundle labels for the histories ``S_0..S_t``.

    ``"global"`` puts every path in one bundle.  ``"exact"`` groups identical
    histories (paths exported from a tree).  ``"radius"`` greedily assigns
    each unassigned path, in order, as a centre and collects all unassigned
    paths within ``radius`` in sup-distance over ``[0, t]``.
    """
    P = ensemble.n_paths
    if bundling == "global":
        return np.zeros(P, dtype=np.int64)
    hist = ensemble.values[:, : t + 1].reshape(P, -1)
    if bundling == "exact":
        _, labels = np.unique(hist, axis=0, return_inverse=True)
        return labels.reshape(-1).astype(np.int64)
    if bundling == "radius":
        if radius is None or not radius >= 0:
            raise ConfigurationError("radius bundling needs a non-negative radius")
        labels = np.full(P, -1, dtype=np.int64)
        nxt = 0
        for p in range(P):
            if labels[p] >= 0:
                continue
            free = labels < 0
            dist = np.abs(hist[free] - hist[p]).max(axis=1)
            idx = np.flatnonzero(free)[dist <= radius]
            labels[idx] = nxt
            nxt += 1
        return labels
    raise ConfigurationError(f"unknown bundling {bundling!r}")


def estimate_stickiness(ensemble: PathEnsemble, t: int, delta: float, bundling="global",
                        radius: float | None = None, labels=None, n_bundles: int | None = None
                        ) -> StickinessReport:
    """Per-bundle fraction of paths with ``sup_{u >= t} ||S_u - S_t|| < delta``.

    Explicit ``labels`` (with ``n_bundles``) override ``bundling``; bundles
    without paths are reported as undetermined.  Path weights, if present,
    give weighted fractions with the Kish effective sample size in the
    standard error.
    """
    N = ensemble.n_steps
    if not 0 <= t < N:
        raise ValueError(f"t={t} must lie in [0, {N})")
    if not delta > 0:
        raise ValueError("delta must be positive")
    if labels is None:
        labels = bundle_paths(ensemble, t, bundling, radius)
    labels = np.asarray(labels, dtype=np.int64)
    nb = int(labels.max()) + 1 if n_bundles is None else int(n_bundles)
    S = ensemble.values
    dev = np.abs(S[:, t:] - S[:, t : t + 1]).max(axis=(1, 2))
    hit = dev < delta
    w = np.ones(ensemble.n_paths) if ensemble.weights is None else ensemble.weights
    cells = []
    for b in range(nb):
        sel = labels == b
        n = int(sel.sum())
        cid = f"bundle:{b}@t={t}"
        if n == 0:
            cells.append(StickinessCell(cid, "estimate", float("nan"), float("nan"),
                                        UNDETERMINED, 0, 0.0))
            continue
        wb = w[sel]
        p = float(wb[hit[sel]].sum() / wb.sum())
        n_eff = wb.sum() ** 2 / (wb**2).sum()
        se = math.sqrt(p * (1 - p) / n_eff)
        hits = float(hit[sel].sum())
        cells.append(StickinessCell(cid, "estimate", p, se, OK if p > 0 else ZERO, n, hits))
    return StickinessReport(tuple(cells))


def pool_estimates(reports: Iterable[StickinessReport]) -> StickinessReport:
    """Pool unweighted estimates of the same cells computed on disjoint batches."""
    n, hits, order = {}, {}, []
    for rep in reports:
        for c in rep.cells:
            if c.cell_id not in n:
                order.append(c.cell_id)
                n[c.cell_id], hits[c.cell_id] = 0, 0.0
            n[c.cell_id] += c.n
            hits[c.cell_id] += c.hits
    cells = []
    for cid in order:
        if n[cid] == 0:
            cells.append(StickinessCell(cid, "estimate", float("nan"), float("nan"),
                                        UNDETERMINED, 0, 0.0))
            continue
        p = hits[cid] / n[cid]
        cells.append(StickinessCell(cid, "estimate", p, math.sqrt(p * (1 - p) / n[cid]),
                                    OK if p > 0 else ZERO, n[cid], hits[cid]))
    return StickinessReport(tuple(cells))


def sup_abs_brownian_prob(a: float = 1.0, horizon: float = 1.0, tol: float = 1e-17) -> float:
    """``P(sup_{[0, T]} |W| < a)`` for standard Brownian motion.

    Alternating theta series ``4/pi sum_k (-1)^k/(2k+1) exp(-(2k+1)^2 pi^2 T / (8 a^2))``;
    summation stops once a term drops below ``tol``.
    """
    if not a > 0 or not horizon > 0:
        raise ValueError("a and horizon must be positive")
    c = math.pi**2 * horizon / (8 * a * a)
    total, k = 0.0, 0
    while True:
        term = math.exp(-((2 * k + 1) ** 2) * c) / (2 * k + 1)
        total += term if k % 2 == 0 else -term
        if term < tol:
            break
        k += 1
    return 4 / math.pi * total


def tree_stickiness(tree: ScenarioTree, delta: float, t: int | None = None) -> StickinessReport:
    """Exact ``P[S*_node < delta | node]`` for every non-terminal node (at depth ``t`` if given)."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    paths = tree.scenario_paths
    table = sup_deviation_table(tree.scenario_prices)
    prob = tree.leaf_prob
    cells = []
    for k in tree.topological_order:
        k = int(k)
        if not tree.children[k]:
            continue
        tk = int(tree.time_index[k])
        if t is not None and tk != t:
            continue
        sel = paths[:, tk] == k
        p = float(prob[sel & (table[:, tk] < delta)].sum() / prob[sel].sum())
        cells.append(_exact_cell(f"node:{k}@t={tk}", "tree", p))
    return StickinessReport(tuple(cells))


def tree_to_ensemble(tree: ScenarioTree, times=None) -> PathEnsemble:
    """Every scenario as one path, weighted by its probability."""
    N = tree.depth
    times = np.arange(N + 1, dtype=float) if times is None else times
    return PathEnsemble(times, tree.scenario_prices, weights=tree.leaf_prob)
