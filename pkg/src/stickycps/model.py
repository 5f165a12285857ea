"""Core data types: price paths, path ensembles and finite scenario trees."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterator, Sequence

import numpy as np

STRUCT_TOL = 1e-12
AGG_TOL = 1e-10


class DimensionError(ValueError):
    """Raised for empty or mismatched vectors."""


class ConfigurationError(ValueError):
    """Raised when a generator or experiment configuration is invalid."""


class ConsistencyError(RuntimeError):
    """An internal invariant of the construction was violated."""


def _frozen(a, dtype=float) -> np.ndarray:
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


def max_norm(x) -> float:
    """Max-norm ``max_i |x_i|`` of a vector."""
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        raise DimensionError("max_norm of an empty vector")
    return float(np.max(np.abs(x)))


@dataclass(frozen=True)
class PricePath:
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        times = _frozen(self.times)
        values = np.array(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        values.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        if times.ndim != 1 or len(times) < 1:
            raise DimensionError("times must be a nonempty 1-d grid")
        if values.shape[0] != len(times) or values.shape[1] < 1:
            raise DimensionError(
                f"values shape {values.shape} does not match {len(times)} timestamps")
        if times[0] != 0.0 or np.any(np.diff(times) <= 0):
            raise ValueError("times must start at 0 and be strictly increasing")
        if np.any(values <= 0):
            raise ValueError("prices must be strictly positive")

    @property
    def d(self) -> int:
        return self.values.shape[1]

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1


@dataclass(frozen=True)
class PathEnsemble:
    """A batch of paths on one shared grid.

    ``values`` has shape ``(n_paths, n_steps + 1, d)``.  Positivity is not
    enforced here because the plain Brownian generator produces signed paths;
    :meth:`check_positive` is available for price ensembles.
    """

    times: np.ndarray
    values: np.ndarray
    seed: int | None = None
    weights: np.ndarray | None = None

    def __post_init__(self):
        times = _frozen(self.times)
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 2:
            values = values[:, :, None]
        if values.ndim != 3 or values.shape[0] == 0:
            raise DimensionError("ensemble must hold at least one path")
        if values.shape[1] != len(times):
            raise DimensionError("paths do not share the ensemble grid")
        if times[0] != 0.0 or np.any(np.diff(times) <= 0):
            raise ValueError("times must start at 0 and be strictly increasing")
        values.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        if self.weights is not None:
            w = _frozen(self.weights)
            if w.shape != (values.shape[0],) or np.any(w <= 0):
                raise ValueError("weights must be positive, one per path")
            object.__setattr__(self, "weights", w)

    @property
    def n_paths(self) -> int:
        return self.values.shape[0]

    @property
    def n_steps(self) -> int:
        return self.values.shape[1] - 1

    @property
    def d(self) -> int:
        return self.values.shape[2]

    @property
    def paths(self) -> Iterator[PricePath]:
        for v in self.values:
            yield PricePath(self.times, v)

    def check_positive(self) -> bool:
        return bool(np.all(self.values > 0))


@dataclass(frozen=True)
class EpsilonParams:
    eps_target: float
    eps_working: float

    def __post_init__(self):
        if not self.eps_target > 0:
            raise ValueError("eps_target must be positive")
        if abs((1 + self.eps_working) ** 4 - (1 + self.eps_target)) > 1e-12 * (1 + self.eps_target):
            raise ValueError("eps_working does not satisfy (1+e')^4 = 1+e")

    @classmethod
    def from_target(cls, eps_target: float) -> "EpsilonParams":
        if not eps_target > 0:
            raise ValueError("eps_target must be positive")
        return cls(float(eps_target), math.expm1(math.log1p(eps_target) / 4))


@dataclass(frozen=True)
class ScenarioTree:
    """Finite filtered market model stored as flat arrays.

    Node ``k`` has price ``prices[k]`` (a d-vector) at depth ``time_index[k]``;
    ``children[k]`` lists ``(child_id, probability)`` pairs.  Construction only
    checks that the arrays are well formed; use :func:`validate_tree` for the
    model invariants.
    """

    prices: np.ndarray
    time_index: np.ndarray
    children: tuple
    root: int = 0

    def __post_init__(self):
        prices = np.array(self.prices, dtype=float)
        if prices.ndim == 1:
            prices = prices[:, None]
        prices.setflags(write=False)
        object.__setattr__(self, "prices", prices)
        object.__setattr__(self, "time_index", _frozen(self.time_index, dtype=np.int64))
        ch = tuple(tuple((int(c), float(p)) for c, p in kids) for kids in self.children)
        object.__setattr__(self, "children", ch)
        n = prices.shape[0]
        if n == 0:
            raise DimensionError("tree has no nodes")
        if self.time_index.shape != (n,) or len(ch) != n:
            raise DimensionError("node arrays disagree in length")
        if not 0 <= self.root < n:
            raise ValueError("root id out of range")
        for kids in ch:
            for c, _ in kids:
                if not 0 <= c < n:
                    raise ValueError(f"child id {c} out of range")

    @classmethod
    def from_nodes(cls, nodes: Sequence[dict], root) -> "ScenarioTree":
        """Build from ``{id, time_index, price, children: [{id, prob}]}`` records."""
        ids = [nd["id"] for nd in nodes]
        index = {nid: k for k, nid in enumerate(ids)}
        if len(index) != len(ids):
            raise ValueError("duplicate node ids")
        prices = [nd["price"] for nd in nodes]
        if len({len(p) for p in prices}) != 1:
            raise DimensionError("price vectors of unequal dimension")
        children = []
        for nd in nodes:
            try:
                children.append([(index[c["id"]], c["prob"]) for c in nd.get("children", [])])
            except KeyError as e:
                raise ValueError(f"unknown child id {e.args[0]!r}") from None
        return cls(prices, [nd["time_index"] for nd in nodes], tuple(children), index[root])

    @property
    def n_nodes(self) -> int:
        return self.prices.shape[0]

    @property
    def d(self) -> int:
        return self.prices.shape[1]

    @property
    def depth(self) -> int:
        return int(self.time_index.max())

    @cached_property
    def parent(self) -> np.ndarray:
        par = np.full(self.n_nodes, -1, dtype=np.int64)
        for k, kids in enumerate(self.children):
            for c, _ in kids:
                par[c] = k
        par.setflags(write=False)
        return par

    @cached_property
    def edge_prob(self) -> np.ndarray:
        """Probability of the edge into each node (1 at the root)."""
        ep = np.ones(self.n_nodes)
        for kids in self.children:
            for c, p in kids:
                ep[c] = p
        ep.setflags(write=False)
        return ep

    @cached_property
    def node_prob(self) -> np.ndarray:
        """Unconditional probability of reaching each node."""
        prob = np.zeros(self.n_nodes)
        prob[self.root] = 1.0
        for k in self.topological_order:
            for c, p in self.children[k]:
                prob[c] = prob[k] * p
        prob.setflags(write=False)
        return prob

    @cached_property
    def topological_order(self) -> np.ndarray:
        order, stack, seen = [], [self.root], set()
        while stack:
            k = stack.pop()
            if k in seen:
                raise ValueError("tree contains a cycle or a shared child")
            seen.add(k)
            order.append(k)
            stack.extend(c for c, _ in reversed(self.children[k]))
        return _frozen(order, dtype=np.int64)

    @cached_property
    def leaves(self) -> np.ndarray:
        return _frozen([k for k in self.topological_order if not self.children[k]],
                       dtype=np.int64)

    @cached_property
    def scenario_paths(self) -> np.ndarray:
        """Node ids visited by each scenario, shape ``(n_leaves, depth + 1)``.

        Requires all leaves at the terminal depth.
        """
        N = self.depth
        paths = np.empty((len(self.leaves), N + 1), dtype=np.int64)
        for row, leaf in enumerate(self.leaves):
            k = int(leaf)
            if self.time_index[k] != N:
                raise ValueError(f"leaf {k} is not at terminal depth {N}")
            for t in range(N, -1, -1):
                paths[row, t] = k
                k = int(self.parent[k])
        paths.setflags(write=False)
        return paths

    @cached_property
    def scenario_prices(self) -> np.ndarray:
        """Price trajectories, shape ``(n_leaves, depth + 1, d)``."""
        sp = self.prices[self.scenario_paths]
        sp.setflags(write=False)
        return sp

    @cached_property
    def leaf_prob(self) -> np.ndarray:
        return _frozen(self.node_prob[self.leaves])

    @cached_property
    def subtree_leaves(self) -> list:
        """For every node, the array of scenario rows passing through it."""
        rows: list = [[] for _ in range(self.n_nodes)]
        for row, path in enumerate(self.scenario_paths):
            for k in path:
                rows[k].append(row)
        return [np.asarray(r, dtype=np.int64) for r in rows]


def validate_tree(tree: ScenarioTree) -> list[str]:
    """List every violated tree invariant; an empty list means the tree is valid."""
    problems = []
    n = tree.n_nodes
    in_degree = np.zeros(n, dtype=int)
    for k, kids in enumerate(tree.children):
        for c, _ in kids:
            in_degree[c] += 1
    if in_degree[tree.root]:
        problems.append(f"root {tree.root} has a parent")
    for k in np.flatnonzero(in_degree > 1):
        problems.append(f"node {k} has {in_degree[k]} parents")

    reach, stack = np.zeros(n, dtype=bool), [tree.root]
    while stack:
        k = stack.pop()
        if reach[k]:
            continue
        reach[k] = True
        stack.extend(c for c, _ in tree.children[k])
    for k in np.flatnonzero(~reach):
        problems.append(f"node {k} is not reachable from the root")

    if tree.time_index[tree.root] != 0:
        problems.append(f"root has time_index {tree.time_index[tree.root]}, expected 0")
    N = tree.depth
    for k, kids in enumerate(tree.children):
        for c, _ in kids:
            if tree.time_index[c] != tree.time_index[k] + 1:
                problems.append(f"edge {k}->{c} does not advance time by one step")
        if not kids and tree.time_index[k] != N:
            problems.append(f"leaf {k} at depth {tree.time_index[k]}, expected {N}")
        if kids:
            probs = np.array([p for _, p in kids])
            for (c, p) in kids:
                if not p > 0:
                    problems.append(f"edge {k}->{c} has non-positive probability {p}")
            total = float(probs.sum())
            if abs(total - 1.0) > STRUCT_TOL:
                problems.append(f"node {k}: edge probabilities sum to {total:.12g}")
        bad = np.flatnonzero(~(tree.prices[k] > 0))
        if bad.size:
            problems.append(f"node {k}: non-positive price in coordinate(s) {bad.tolist()}")
    return problems
