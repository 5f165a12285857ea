"""Generators for sticky path ensembles and sticky scenario trees."""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import ConfigurationError, PathEnsemble, ScenarioTree

MAX_TREE_NODES = 2_000_000


@dataclass(frozen=True)
class SimConfig:
    n_steps: int = 100
    n_paths: int = 1000
    horizon: float = 1.0
    d: int = 1
    seed: int | None = 0
    volatility: float = 1.0
    hurst: float = 0.5
    s0: float | Sequence[float] = 1.0
    correlation: np.ndarray | None = None
    drift: float = 0.0

    def __post_init__(self):
        if self.n_steps < 1:
            raise ConfigurationError("n_steps must be >= 1")
        if self.n_paths < 1:
            raise ConfigurationError("n_paths must be >= 1")
        if not self.horizon > 0:
            raise ConfigurationError("horizon must be positive")
        if self.d < 1:
            raise ConfigurationError("d must be >= 1")
        if self.volatility < 0:
            raise ConfigurationError("volatility must be non-negative")
        if not 0 < self.hurst < 1:
            raise ConfigurationError("hurst must lie in (0, 1)")
        if np.any(self.s0_vector <= 0):
            raise ConfigurationError("s0 must be positive")
        if self.correlation is not None:
            c = np.asarray(self.correlation, dtype=float)
            if c.shape != (self.d, self.d) or not np.allclose(c, c.T):
                raise ConfigurationError("correlation must be a symmetric d x d matrix")
            if np.linalg.eigvalsh(c).min() < -1e-12:
                raise ConfigurationError("correlation matrix is not positive semidefinite")

    @property
    def s0_vector(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.s0, dtype=float), (self.d,)).copy()

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.n_steps + 1)


def _rng(config: SimConfig) -> np.random.Generator:
    return np.random.default_rng(config.seed)


def _brownian_values(config: SimConfig, rng: np.random.Generator) -> np.ndarray:
    """``W`` on the grid, shape (n_paths, n_steps + 1, d), built in place."""
    P, N, d = config.n_paths, config.n_steps, config.d
    w = np.empty((P, N + 1, d))
    w[:, 0] = 0.0
    w[:, 1:] = rng.standard_normal((P, N, d))
    if config.correlation is not None:
        # eigh tolerates semidefinite matrices where cholesky does not
        ev, v = np.linalg.eigh(np.asarray(config.correlation, dtype=float))
        w[:, 1:] = w[:, 1:] @ (v * np.sqrt(np.clip(ev, 0.0, None))).T
    w *= np.sqrt(config.horizon / N)
    np.cumsum(w, axis=1, out=w)
    return w


def gen_brownian(config: SimConfig, geometric: bool = False) -> PathEnsemble:
    """Brownian paths on a uniform grid.

    With ``geometric=False`` the paths are ``volatility * W`` started at zero.
    With ``geometric=True`` they are the positive prices
    ``s0 * exp((drift - vol^2/2) t + vol W_t)``.
    """
    values = _brownian_values(config, _rng(config))
    sigma = config.volatility
    values *= sigma
    if geometric:
        values += ((config.drift - 0.5 * sigma**2) * config.times)[None, :, None]
        np.exp(values, out=values)
        values *= config.s0_vector
    return PathEnsemble(config.times, values, seed=config.seed)


def fbm_covariance(times: np.ndarray, hurst: float) -> np.ndarray:
    s, t = np.meshgrid(times, times, indexing="ij")
    h2 = 2 * hurst
    return 0.5 * (s**h2 + t**h2 - np.abs(t - s) ** h2)


def gen_fbm(config: SimConfig, positive: bool = False) -> PathEnsemble:
    """Fractional Brownian motion via Cholesky factorisation of the exact covariance.

    Coordinates are independent fBm's.  ``positive=True`` returns
    ``s0 * exp(volatility * B_H)``.
    """
    t = config.times
    cov = fbm_covariance(t[1:], config.hurst)
    try:
        factor = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise FloatingPointError(
            f"fBm covariance on {config.n_steps} steps is not numerically positive "
            "definite; reduce n_steps") from None
    rng = _rng(config)
    z = rng.standard_normal((config.n_paths, config.d, config.n_steps))
    b = np.einsum("ij,pkj->pik", factor, z)
    b = np.concatenate([np.zeros((config.n_paths, 1, config.d)), b], axis=1)
    if positive:
        return PathEnsemble(t, config.s0_vector * np.exp(config.volatility * b), seed=config.seed)
    return PathEnsemble(t, config.volatility * b, seed=config.seed)


def gen_increasing_example(config: SimConfig) -> PathEnsemble:
    """``s0 + integral_0^t |B_s| ds`` with a left-endpoint Riemann sum."""
    t = config.times
    dt = config.horizon / config.n_steps
    b = gen_brownian(config).values
    integral = np.cumsum(np.abs(b[:, :-1, :]) * dt, axis=1)
    values = np.concatenate([np.zeros((config.n_paths, 1, config.d)), integral], axis=1)
    return PathEnsemble(t, config.s0_vector + values, seed=config.seed)


def increasing_example_mean(config: SimConfig) -> float:
    """Closed-form ``E[S_T - s0]`` of the discretised increasing example."""
    t = config.times[:-1]
    dt = config.horizon / config.n_steps
    return float(np.sum(config.volatility * np.sqrt(2 * t / np.pi)) * dt)


@dataclass(frozen=True)
class TreeGenConfig:
    """Recombination-free tree generator.

    Every non-terminal node gets one child per entry of ``moves`` (a
    multiplicative d-vector) plus a final freeze child with probability
    ``freeze_prob``.  Move probabilities default to an even split of the
    remaining mass.
    """

    depth: int
    moves: tuple
    freeze_prob: float = 0.2
    s0: float | Sequence[float] = 100.0
    d: int = 1
    move_probs: tuple | None = None
    freeze: bool = True

    def __post_init__(self):
        moves = np.atleast_2d(np.asarray(self.moves, dtype=float))
        if moves.size == 0:
            moves = np.empty((0, self.d))
        if moves.shape[1] == 1 and self.d > 1:
            moves = np.repeat(moves, self.d, axis=1)
        object.__setattr__(self, "moves", tuple(map(tuple, moves)))
        if self.depth < 0:
            raise ConfigurationError("depth must be >= 0")
        if moves.shape[1] != self.d:
            raise ConfigurationError(f"moves have dimension {moves.shape[1]}, expected d={self.d}")
        if np.any(moves <= 0):
            raise ConfigurationError("move factors must be positive")
        if self.freeze and not 0 < self.freeze_prob < 1:
            raise ConfigurationError("freeze_prob must lie in (0, 1)")
        if np.any(np.broadcast_to(np.asarray(self.s0, dtype=float), (self.d,)) <= 0):
            raise ConfigurationError("s0 must be positive")
        probs = self.branch_probs
        if len(probs) == 0:
            raise ConfigurationError("tree needs at least one branch")
        if np.any(probs <= 0) or abs(probs.sum() - 1) > 1e-12:
            raise ConfigurationError(
                f"branch probabilities {probs.tolist()} must be positive and sum to 1")

    @property
    def factors(self) -> np.ndarray:
        f = np.asarray(self.moves, dtype=float).reshape(-1, self.d)
        if self.freeze:
            f = np.vstack([f, np.ones((1, self.d))])
        return f

    @property
    def branch_probs(self) -> np.ndarray:
        n = len(self.moves)
        stay = self.freeze_prob if self.freeze else 0.0
        if self.move_probs is not None:
            mp = np.asarray(self.move_probs, dtype=float)
            if mp.shape != (n,):
                raise ConfigurationError(
                    f"{len(mp)} move probabilities given for {n} moves")
        else:
            mp = np.full(n, (1.0 - stay) / n) if n else np.empty(0)
        return np.append(mp, stay) if self.freeze else mp

    @classmethod
    def binomial(cls, depth, up, down, freeze_prob=0.2, s0=100.0, d=1, freeze=True):
        """Independent up/down moves per coordinate (``2**d`` move branches)."""
        moves = list(itertools.product((up, down), repeat=d))
        return cls(depth, tuple(moves), freeze_prob, s0, d, freeze=freeze)


def _expand(config: TreeGenConfig) -> ScenarioTree:
    factors = config.factors
    probs = config.branch_probs
    b = len(factors)
    total = sum(b**k for k in range(config.depth + 1))
    if total > MAX_TREE_NODES:
        raise ConfigurationError(f"tree would have {total} nodes (limit {MAX_TREE_NODES})")
    s0 = np.broadcast_to(np.asarray(config.s0, dtype=float), (config.d,))
    prices = [s0[None, :]]
    for _ in range(config.depth):
        prices.append((prices[-1][:, None, :] * factors[None, :, :]).reshape(-1, config.d))
    prices = np.vstack(prices)
    time_index = np.concatenate([np.full(b**k, k) for k in range(config.depth + 1)])
    n_internal = total - b**config.depth
    child_ids = np.arange(1, n_internal * b + 1).reshape(n_internal, b)
    prob_list = probs.tolist()
    children = tuple(
        tuple(zip(row.tolist(), prob_list)) for row in child_ids
    ) + ((),) * (total - n_internal)
    return ScenarioTree(prices, time_index, children, 0)


def build_sticky_tree(config: TreeGenConfig) -> ScenarioTree:
    """Tree in which every non-terminal node has a freeze child of probability ``freeze_prob``."""
    if not config.freeze:
        raise ConfigurationError("build_sticky_tree requires the freeze branch")
    return _expand(config)


def build_plain_tree(config: TreeGenConfig) -> ScenarioTree:
    """Same expansion without any stickiness guarantee (``freeze`` may be off)."""
    return _expand(config)


def build_increasing_tree(depth: int, up, freeze_prob: float = 0.3, s0=100.0, d: int = 1,
                          freeze: bool = True) -> ScenarioTree:
    """Monotone tree: every non-freeze branch multiplies all coordinates by an up factor.

    ``up`` is a single factor or a sequence of factors, one branch each.
    """
    ups = np.atleast_1d(np.asarray(up, dtype=float))
    if np.any(ups <= 1):
        raise ConfigurationError("up factors must exceed 1")
    moves = tuple((u,) * d for u in ups)
    return _expand(TreeGenConfig(depth, moves, freeze_prob, s0, d, freeze=freeze))


def ladder_factors(top: float, n_levels: int) -> np.ndarray:
    """Relative move sizes ``top * (j + 1/2) / (n_levels - 1)`` for ``j < n_levels - 1`` and ``top``.

    The sizes sit at the midpoints of ``n_levels - 1`` equal cells below
    ``top``, so a single step populates every cell strictly below the largest
    move.
    """
    if n_levels < 2:
        return np.array([top])
    k = n_levels - 1
    return np.append(top * (np.arange(k) + 0.5) / k, top)


def ladder_tree_config(depth: int, d: int, top: float, freeze_prob: float,
                       direction=None, s0=100.0, both_ways: bool = False) -> TreeGenConfig:
    """Sticky tree whose moves scale all coordinates along ``direction``.

    ``2d + 2`` move sizes (``ladder_factors(top, 2d + 2)``) make every
    skeleton bucket reachable in one step.  ``both_ways`` adds the mirrored
    moves.
    """
    direction = np.ones(d) if direction is None else np.asarray(direction, dtype=float)
    sizes = ladder_factors(top, 2 * d + 2)
    moves = [1 + r * direction for r in sizes]
    if both_ways:
        moves += [1 - r * direction for r in sizes]
    return TreeGenConfig(depth, tuple(map(tuple, moves)), freeze_prob, s0, d)
