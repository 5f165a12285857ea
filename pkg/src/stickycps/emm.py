"""Martingale-measure construction on a skeleton.

Each skeleton node carries a finite conditional law of the increment ``xi``.
If zero lies in the relative interior of the convex hull of its support, a
strictly positive reweighting with zero mean exists; these one-step densities
multiply into the density of an equivalent martingale measure.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.optimize import linprog

from .model import AGG_TOL, ConsistencyError
from .simplex import max_min_weights
from .skeleton import SkeletonDecomposition

RI_TOL = 1e-9


class InfeasibleNodeError(ValueError):
    """No strictly positive zero-mean reweighting exists; carries a separating functional."""

    def __init__(self, message, certificate):
        super().__init__(message)
        self.certificate = certificate


class BoundWarning(UserWarning):
    """The density bound ``|Z - 1| <= eta`` could not be met at a node."""


def _scaled(points: np.ndarray) -> np.ndarray:
    scale = np.abs(points).max() if points.size else 0.0
    return points / scale if scale > 0 else points


def _project_moments(q: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Least-change correction of ``q`` onto ``sum q = 1, sum q x = 0``."""
    A = np.vstack([np.ones(len(q)), points.T])
    b = np.zeros(A.shape[0])
    b[0] = 1.0
    r = A @ q - b
    return q - np.linalg.lstsq(A, r, rcond=None)[0]


def _max_min_weight(points: np.ndarray, lower=None, upper=None):
    """Maximise ``t`` subject to ``w >= t``, ``sum w = 1``, ``sum w x = 0`` and bounds."""
    m, d = points.shape
    c = np.zeros(m + 1)
    c[-1] = -1.0
    A_ub = np.hstack([-np.eye(m), np.ones((m, 1))])
    b_ub = np.zeros(m)
    A_eq = np.vstack([np.append(np.ones(m), 0.0),
                      np.hstack([points.T, np.zeros((d, 1))])])
    b_eq = np.zeros(d + 1)
    b_eq[0] = 1.0
    lo = np.zeros(m) if lower is None else lower
    hi = np.ones(m) if upper is None else upper
    bounds = list(zip(lo, hi)) + [(None, 1.0)]
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds,
                  method="highs")
    if res.status != 0:
        return None, -np.inf
    return res.x[:m], float(res.x[-1])


def _separator(points: np.ndarray) -> np.ndarray | None:
    """Functional ``y`` in the span of the points with ``y.x >= 0`` and ``sum y.x > 0``."""
    m, d = points.shape
    res = linprog(-points.sum(axis=0), A_ub=-points, b_ub=np.zeros(m),
                  bounds=[(-1.0, 1.0)] * d, method="highs")
    if res.status != 0 or -res.fun <= RI_TOL:
        return None
    y = res.x
    _, sv, vt = np.linalg.svd(points, full_matrices=False)
    rank = int(np.sum(sv > 1e-12 * max(sv.max(), 1.0)))
    span = vt[:rank]
    y = span.T @ (span @ y)
    return y


def ri_conv_contains_zero(points) -> tuple[bool, np.ndarray]:
    """Decide ``0 in ri conv(points)`` for a finite point set.

    Returns ``(True, weights)`` with strictly positive barycentric weights
    representing zero, or ``(False, y)`` where ``y`` is a functional in the
    span of the points that is non-negative on all of them and positive on at
    least one.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[0] == 0:
        raise ValueError("empty point set")
    if not np.any(pts):
        return True, np.full(pts.shape[0], 1.0 / pts.shape[0])
    scaled = _scaled(pts)
    w, t = max_min_weights(scaled)
    if w is not None and t > RI_TOL:
        w = _project_moments(np.clip(w, t, None), scaled)
        return True, w
    y = _separator(scaled)
    if y is None:
        # boundary case: the LP could not separate either; report the weak functional
        y = np.zeros(pts.shape[1])
    return False, y


@dataclass(frozen=True)
class NodeSupport:
    """Distinct increment values at a skeleton node with their conditional probabilities."""

    xi: np.ndarray
    p: np.ndarray
    atom_of: np.ndarray = field(repr=False)

    def __post_init__(self):
        if np.any(self.p <= 0) or abs(self.p.sum() - 1.0) > AGG_TOL:
            raise ValueError("atom probabilities must be positive and sum to 1")

    @classmethod
    def from_members(cls, xi: np.ndarray, prob: np.ndarray) -> "NodeSupport":
        if len(xi) == 1:
            return cls(xi.copy(), np.ones(1), np.zeros(1, dtype=np.int64))
        atoms, atom_of = np.unique(xi, axis=0, return_inverse=True)
        atom_of = atom_of.reshape(-1)
        p = np.bincount(atom_of, weights=prob, minlength=len(atoms))
        return cls(atoms, p / p.sum(), atom_of)

    @cached_property
    def ri(self) -> tuple[bool, np.ndarray]:
        return ri_conv_contains_zero(self.xi)


@dataclass(frozen=True)
class NodeMeasure:
    q: np.ndarray
    z: np.ndarray
    eta: float | None = None
    bound_met: bool = True

    @property
    def atom_density(self) -> np.ndarray:
        return self.z


def solve_node_emm(support: NodeSupport, eta: float | None = None) -> NodeMeasure:
    """Strictly positive zero-mean reweighting of a node's atoms.

    Among the feasible weights the one maximising the smallest atom weight is
    returned.  With ``eta`` the weights are additionally kept within
    ``[(1-eta) p, (1+eta) p]``; if that is infeasible the unbounded solution
    is returned with a :class:`BoundWarning`.
    """
    xi, p = support.xi, support.p
    if len(p) == 1:
        if np.any(xi[0] != 0):
            y = np.sign(xi[0])
            raise InfeasibleNodeError("single non-zero atom", y)
        return NodeMeasure(np.ones(1), np.ones(1), eta)
    scaled = _scaled(xi)
    q = None
    bound_met = True
    if eta is not None:
        q, t = _max_min_weight(scaled, (1 - eta) * p, (1 + eta) * p)
        if q is None or t <= RI_TOL:
            q = None
            bound_met = False
            warnings.warn(f"density bound eta={eta:g} infeasible; using unbounded weights",
                          BoundWarning, stacklevel=2)
    if q is None:
        ok, cert = support.ri
        if not ok:
            raise InfeasibleNodeError("zero is not in the relative interior of the support", cert)
        q = cert
    else:
        q = _project_moments(q, scaled)
    if np.any(q <= 0):
        raise ConsistencyError("moment projection produced a non-positive weight")
    return NodeMeasure(q, q / p, eta, bound_met)


@dataclass
class ConditionFailure:
    level: int
    node: int
    anchor_node: int
    condition: str
    detail: str
    certificate: np.ndarray | None = None


def node_supports(skeleton: SkeletonDecomposition):
    """``NodeSupport`` for every skeleton node, as a list of per-level lists."""
    out = []
    for lv in skeleton.levels:
        order = np.argsort(lv.node, kind="stable")
        bounds = np.searchsorted(lv.node[order], np.arange(lv.n_nodes + 1))
        level_supports = []
        for k in range(lv.n_nodes):
            m = order[bounds[k]:bounds[k + 1]]
            level_supports.append((m, NodeSupport.from_members(lv.xi[m], skeleton.prob[m])))
        out.append(level_supports)
    return out


def check_conditions(skeleton: SkeletonDecomposition, supports=None) -> list[ConditionFailure]:
    """Check the three sufficient conditions for an equivalent martingale measure.

    (i) zero in the relative interior of each node's increment support;
    (ii) the zero-increment sets grow scenario-wise and cover everything at the
    last level; (iii) zero is a positive-probability atom at every node whose
    previous increment was non-zero.  Returns all failures.
    """
    supports = node_supports(skeleton) if supports is None else supports
    failures = []
    prev_zero = None
    for lv, level_supports in zip(skeleton.levels, supports):
        zero = np.all(lv.xi == 0, axis=1)
        for k, (m, sup) in enumerate(level_supports):
            ok, cert = sup.ri
            if not ok:
                failures.append(ConditionFailure(
                    lv.n, k, int(lv.anchor_node[k]), "i",
                    f"0 not in ri conv of {len(sup.p)} atoms", cert))
            if prev_zero is not None and not prev_zero[m[0]]:
                has_zero = np.any(np.all(sup.xi == 0, axis=1))
                if not has_zero:
                    failures.append(ConditionFailure(
                        lv.n, k, int(lv.anchor_node[k]), "iii",
                        "previous increment non-zero but xi = 0 has probability 0"))
        if prev_zero is not None:
            lost = np.flatnonzero(prev_zero & ~zero)
            for s in lost[:10]:
                failures.append(ConditionFailure(
                    lv.n, int(lv.node[s]), int(lv.anchor_node[lv.node[s]]), "ii",
                    f"scenario {s}: xi_{lv.n - 1} = 0 but xi_{lv.n} != 0"))
        prev_zero = zero
    if skeleton.levels:
        last = skeleton.levels[-1]
        if np.any(last.tau_next < skeleton.N):
            failures.append(ConditionFailure(last.n, -1, -1, "ii",
                                             "final level does not absorb every scenario"))
    return failures


@dataclass(frozen=True)
class MeasureQ:
    density: np.ndarray
    q_prob: np.ndarray
    z: tuple
    node_measures: tuple = field(repr=False, default=())

    @property
    def L(self) -> np.ndarray:
        return self.density


def solve_all(skeleton: SkeletonDecomposition, supports=None, bounded: bool = False):
    """Solve every skeleton node; ``bounded`` uses ``eta = 2**-n`` at level ``n``."""
    supports = node_supports(skeleton) if supports is None else supports
    measures = []
    for lv, level_supports in zip(skeleton.levels, supports):
        eta = 2.0 ** -lv.n if bounded else None
        measures.append([solve_node_emm(sup, eta) for _, sup in level_supports])
    return supports, measures


def assemble_measure(skeleton: SkeletonDecomposition, supports, node_measures) -> MeasureQ:
    """Multiply the per-level densities into the terminal density ``L`` per scenario."""
    L = np.ones(skeleton.n_scenarios)
    zs = []
    for level_supports, level_measures in zip(supports, node_measures):
        z = np.empty(skeleton.n_scenarios)
        for (m, sup), nm in zip(level_supports, level_measures):
            z[m] = nm.z[sup.atom_of]
        if np.any(z <= 0):
            raise ConsistencyError("non-positive density factor")
        zs.append(z)
        L = L * z
    return MeasureQ(L, skeleton.prob * L, tuple(zs), tuple(map(tuple, node_measures)))


def build_measure(skeleton: SkeletonDecomposition, bounded: bool = False) -> MeasureQ:
    supports, measures = solve_all(skeleton, bounded=bounded)
    return assemble_measure(skeleton, supports, measures)


@dataclass
class MartingaleReport:
    residuals: list
    max_residual: float
    density_residual: float
    l2_norm: float
    expectation_L: float

    def passed(self, tol: float = 1e-9) -> bool:
        return self.max_residual <= tol and abs(self.expectation_L - 1) <= tol


def verify_martingale(skeleton: SkeletonDecomposition, measure: MeasureQ) -> MartingaleReport:
    """Conditional Q-mean of every skeleton increment, node by node.

    Also reports ``max |E_P[Z_n | node] - 1|``, the L2(Q) norm of the terminal
    X and ``E_P[L]``.
    """
    q = measure.q_prob
    residuals = []
    worst = 0.0
    dens = 0.0
    for n, lv in enumerate(skeleton.levels):
        qn = np.bincount(lv.node, weights=q, minlength=lv.n_nodes)
        level_res = np.zeros(lv.n_nodes)
        mean = np.zeros((lv.n_nodes, skeleton.d))
        for j in range(skeleton.d):
            mean[:, j] = np.bincount(lv.node, weights=q * lv.xi[:, j], minlength=lv.n_nodes)
        level_res = np.abs(mean).max(axis=1) / qn
        residuals.append(level_res)
        worst = max(worst, float(level_res.max()))
        pn = np.bincount(lv.node, weights=skeleton.prob, minlength=lv.n_nodes)
        ez = np.bincount(lv.node, weights=skeleton.prob * measure.z[n], minlength=lv.n_nodes) / pn
        dens = max(dens, float(np.abs(ez - 1).max()))
    xk = skeleton.x_terminal
    l2 = float(np.sqrt(np.sum(q[:, None] * xk**2)))
    return MartingaleReport(residuals, worst, dens, l2, float(np.sum(skeleton.prob * measure.density)))
