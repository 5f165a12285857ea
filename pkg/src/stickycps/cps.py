"""Shadow price M by backward induction under Q, band verification, end-to-end pipeline."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .emm import (MeasureQ, assemble_measure, check_conditions,
                  node_supports, solve_all, verify_martingale)
from .model import ConsistencyError, ScenarioTree, validate_tree
from .skeleton import SkeletonDecomposition, build_skeleton

BAND_SLACK = 1e-9


def adjust_epsilon(eps_target: float) -> float:
    """Working spread ``e'`` with ``(1 + e')**4 == 1 + eps_target``."""
    if not eps_target > 0:
        raise ValueError(f"eps_target must be positive, got {eps_target}")
    return math.expm1(math.log1p(eps_target) / 4)


def rho_after(taus, t: int) -> int:
    """Smallest stopping index strictly after ``t``."""
    taus = np.asarray(taus)
    N = int(taus[-1])
    if t >= N:
        raise ValueError(f"t={t} must be below the terminal index {N}")
    return int(taus[np.searchsorted(taus, t, side="right")])


@dataclass
class BandCheck:
    name: str
    lower: float
    upper: float
    worst_low: float
    worst_high: float
    where_low: tuple = ()
    where_high: tuple = ()

    @property
    def passed(self) -> bool:
        return (self.worst_low >= self.lower - BAND_SLACK
                and self.worst_high <= self.upper + BAND_SLACK)

    @property
    def worst_ratio(self) -> float:
        """Largest factor by which a ratio departs from 1."""
        return max(1.0 / self.worst_low, self.worst_high)


@dataclass
class BandReport:
    checks: dict
    eps_target: float
    eps_working: float

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks.values())

    @property
    def failures(self) -> list:
        return [name for name, c in self.checks.items() if not c.passed]


@dataclass
class CpsResult:
    tree: ScenarioTree
    eps_target: float
    eps_working: float
    verdict: str
    stage: str
    skeleton: SkeletonDecomposition | None = None
    measure: MeasureQ | None = None
    M: np.ndarray | None = None
    q_node: np.ndarray | None = None
    martingale: object = None
    band: BandReport | None = None
    failures: list = field(default_factory=list)
    sampling_residual: float = float("nan")
    m_residual: float = float("nan")

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    @property
    def band_power_4(self) -> np.ndarray | None:
        return None if self.M is None else self.M / self.tree.prices

    @property
    def rho(self) -> np.ndarray | None:
        """``rho_t`` per scenario and grid index ``t < N``."""
        if self.skeleton is None:
            return None
        return rho_table(self.skeleton.taus, self.skeleton.N)

    @property
    def max_martingale_residual(self) -> float:
        vals = [self.m_residual]
        if self.martingale is not None:
            vals.append(self.martingale.max_residual)
        vals = [v for v in vals if not math.isnan(v)]
        return max(vals) if vals else float("nan")


def rho_table(taus: np.ndarray, N: int) -> np.ndarray:
    """``rho_t`` for every row of ``taus`` and every ``t in [0, N)``."""
    t = np.arange(N)
    out = np.empty((taus.shape[0], N), dtype=np.int64)
    for r, row in enumerate(taus):
        out[r] = row[np.searchsorted(row, t, side="right")]
    return out


def node_q_prob(tree: ScenarioTree, q_leaf: np.ndarray) -> np.ndarray:
    """Q-probability of every tree node (mass of the leaves below it)."""
    q = np.zeros(tree.n_nodes)
    paths = tree.scenario_paths
    for t in range(paths.shape[1]):
        np.add.at(q, paths[:, t], q_leaf)
    return q


def build_M(tree: ScenarioTree, skeleton: SkeletonDecomposition, measure: MeasureQ):
    """``M = E_Q[X_final | node]`` on every tree node by backward induction.

    Returns ``(M, q_node, sampling_residual)``; the last entry is the largest
    max-norm gap between ``M`` at the node occupied at ``tau_n`` and ``X_n``.
    """
    paths = tree.scenario_paths
    N = tree.depth
    q_node = node_q_prob(tree, measure.q_prob)
    if np.any(q_node[paths] <= 0):
        raise ConsistencyError("a tree node has zero Q-probability")
    M = np.full((tree.n_nodes, tree.d), np.nan)
    M[paths[:, N]] = skeleton.x_terminal
    order = tree.topological_order
    for k in order[::-1]:
        kids = tree.children[k]
        if not kids:
            continue
        ids = np.fromiter((c for c, _ in kids), dtype=np.int64, count=len(kids))
        M[k] = (q_node[ids] @ M[ids]) / q_node[ids].sum()
    if np.isnan(M[paths]).any():
        raise ConsistencyError("M undefined at some node")
    taus = skeleton.taus
    X = skeleton.X
    rows = np.arange(paths.shape[0])[:, None]
    at_tau = M[paths[rows, taus]]
    sampling = float(np.abs(at_tau - X).max()) if X.size else 0.0
    return M, q_node, sampling


def m_martingale_residual(tree: ScenarioTree, M: np.ndarray, q_node: np.ndarray) -> float:
    """Re-computes ``sum_child Q(child|node) M(child) - M(node)`` independently of :func:`build_M`."""
    worst = 0.0
    for k, kids in enumerate(tree.children):
        if not kids:
            continue
        ids = [c for c, _ in kids]
        w = q_node[ids] / q_node[k]
        worst = max(worst, float(np.abs(w @ M[ids] - M[k]).max()))
    return worst


def _band(name, ratios, lower, upper, index_fn=lambda i: i) -> BandCheck:
    ratios = np.asarray(ratios, dtype=float)
    lo = int(np.argmin(ratios))
    hi = int(np.argmax(ratios))
    return BandCheck(name, lower, upper, float(ratios.flat[lo]), float(ratios.flat[hi]),
                     index_fn(np.unravel_index(lo, ratios.shape)),
                     index_fn(np.unravel_index(hi, ratios.shape)))


def verify_band(tree: ScenarioTree, skeleton: SkeletonDecomposition, M: np.ndarray,
                eps_working: float, eps_target: float) -> BandReport:
    """Checks (a) X vs S at skeleton times, (b) S at rho_t vs S_t, (c) M vs S everywhere.

    (b) is widened by the recorded one-step overshoot of the grid.  The
    verdict on (c) at ``e'`` is the spread band at ``eps_target``.
    """
    g = 1.0 + eps_working
    S = tree.scenario_prices
    X = skeleton.X
    taus = skeleton.taus
    rows = np.arange(S.shape[0])[:, None]
    checks = {}
    checks["a"] = _band("X/S at tau_n", X / S[rows, taus], g**-2, g**2)
    if skeleton.N > 0:
        rho = rho_table(taus, skeleton.N)
        ratio_b = S[rows, rho] / S[:, : skeleton.N]
        o = 1.0 + skeleton.overshoot
        checks["b"] = _band("S at rho_t / S_t", ratio_b, g**-2 / o, g**2 * o)
    checks["c"] = _band("M/S at every node", M / tree.prices, g**-4, g**4)
    checks["target"] = _band("Definition band", M / tree.prices,
                             1.0 / (1.0 + eps_target), 1.0 + eps_target)
    return BandReport(checks, eps_target, eps_working)


def build_cps(tree: ScenarioTree, eps_target: float, perturb: bool = True,
              bounded: bool = False) -> CpsResult:
    """Full pipeline: epsilon adjustment, skeleton, conditions, measure, M, band checks.

    A failure at any stage returns the stage's diagnostics with
    ``verdict`` set to ``"invalid"`` (bad tree), ``"hypothesis"`` (the
    measure conditions fail, e.g. a non-sticky tree) or ``"fail"`` (the
    verification of the constructed objects failed).
    """
    eps_w = adjust_epsilon(eps_target)
    problems = validate_tree(tree)
    if problems:
        return CpsResult(tree, eps_target, eps_w, "invalid", "validate", failures=problems)
    skeleton = build_skeleton(tree, eps_w, perturb=perturb)
    supports = node_supports(skeleton)
    failures = check_conditions(skeleton, supports)
    if failures:
        return CpsResult(tree, eps_target, eps_w, "hypothesis", "conditions", skeleton,
                         failures=failures)
    _, measures = solve_all(skeleton, supports, bounded=bounded)
    measure = assemble_measure(skeleton, supports, measures)
    mart = verify_martingale(skeleton, measure)
    M, q_node, sampling = build_M(tree, skeleton, measure)
    m_res = m_martingale_residual(tree, M, q_node)
    band = verify_band(tree, skeleton, M, eps_w, eps_target)
    failures = []
    if not mart.passed():
        failures.append(f"skeleton martingale residual {mart.max_residual:.3e}")
    if m_res > 1e-9:
        failures.append(f"M martingale residual {m_res:.3e}")
    if sampling > 1e-9:
        failures.append(f"optional sampling gap {sampling:.3e}")
    if np.any((tree.leaf_prob > 0) != (measure.q_prob > 0)):
        failures.append("Q is not equivalent to P on the leaves")
    failures += [f"band check ({name}) violated" for name in band.failures]
    verdict = "fail" if failures else "pass"
    return CpsResult(tree, eps_target, eps_w, verdict, "verified", skeleton, measure, M,
                     q_node, mart, band, failures, sampling, m_res)
