import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from stickycps.simulate import TreeGenConfig, build_sticky_tree, ladder_tree_config  # noqa: E402

# Largest ladder step that keeps every move inside the band at eps_target = 0.05
# (e' = 0.0123) with some room, scaled for unequal starting prices.
LADDER_TOP_AT_005 = 0.0121


def random_ladder_tree(rng, d=None, depth=None, top_fraction=0.75):
    """Sticky ladder tree with random dimension, direction, freeze probability and s0."""
    d = int(rng.integers(1, 4)) if d is None else d
    depth = {1: 5, 2: 4, 3: 3}[d] if depth is None else depth
    phi = float(rng.uniform(0.05, 0.5))
    s0 = rng.uniform(80, 120, size=d)
    top = float(rng.uniform(0.002, LADDER_TOP_AT_005 * s0.min() / s0.max() * top_fraction))
    direction = rng.choice([-1.0, 1.0], size=d)
    return build_sticky_tree(ladder_tree_config(depth, d, top, phi, direction, s0=s0))


@pytest.fixture
def binomial3():
    return build_sticky_tree(TreeGenConfig.binomial(3, 1.1, 0.9, 0.2))


@pytest.fixture
def ladder_d2():
    return build_sticky_tree(ladder_tree_config(3, 2, 0.008, 0.25, [1.0, -1.0], s0=[95.0, 105.0]))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# one-line verdicts filled in by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
