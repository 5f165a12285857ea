import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import leaf_probabilities
from stickycps.model import (DimensionError, EpsilonParams, PathEnsemble, PricePath,
                             ScenarioTree, max_norm, validate_tree)
from stickycps.simulate import TreeGenConfig, build_plain_tree


@pytest.mark.parametrize("x, expected", [((3, -4), 4), ((0, 0, 0), 0), ((-5, 2), 5)])
def test_max_norm_examples(x, expected):
    assert max_norm(x) == expected


def test_max_norm_empty_vector():
    with pytest.raises(DimensionError):
        max_norm([])


finite = st.floats(-1e6, 1e6, allow_nan=False)


@given(arrays(float, 4, elements=finite), arrays(float, 4, elements=finite),
       st.floats(-100, 100, allow_nan=False))
def test_max_norm_is_a_norm(x, y, a):
    assert max_norm(x + y) <= max_norm(x) + max_norm(y) + 1e-9 * (1 + max_norm(x) + max_norm(y))
    assert max_norm(a * x) == pytest.approx(abs(a) * max_norm(x), rel=1e-12, abs=1e-300)


def two_step_binomial():
    return build_plain_tree(TreeGenConfig.binomial(2, 1.1, 0.9, freeze=False))


def test_valid_binomial_tree_has_empty_report():
    assert validate_tree(two_step_binomial()) == []


def test_probability_sum_violation():
    tree = ScenarioTree([[1.0], [1.1], [0.9]], [0, 1, 1], (((1, 0.6), (2, 0.5)), (), ()))
    report = validate_tree(tree)
    assert len(report) == 1
    assert "sum to 1.1" in report[0]


def test_positivity_violation():
    tree = ScenarioTree([[1.0, 2.0], [1.1, 0.0], [0.9, 2.0]], [0, 1, 1],
                        (((1, 0.5), (2, 0.5)), (), ()))
    report = validate_tree(tree)
    assert len(report) == 1
    assert "non-positive price" in report[0]


def test_structural_violations_are_all_listed():
    # leaf 2 too shallow, edge 0->3 skips a level
    tree = ScenarioTree([[1.0]] * 4, [0, 1, 1, 2], (((1, 0.5), (3, 0.5)), ((2, 1.0),), (), ()))
    report = validate_tree(tree)
    assert any("does not advance time" in r for r in report)
    assert any("leaf 2 at depth 1" in r for r in report)


def test_unreachable_node_reported():
    tree = ScenarioTree([[1.0], [1.0], [1.0]], [0, 1, 1], (((1, 1.0),), (), ()))
    assert any("not reachable" in r for r in validate_tree(tree))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 4), st.floats(1.01, 1.5), st.floats(0.5, 0.99), st.floats(0.05, 0.9))
def test_valid_tree_leaf_mass_is_one(depth, up, down, phi):
    tree = build_plain_tree(TreeGenConfig.binomial(depth, up, down, phi))
    assert validate_tree(tree) == []
    assert abs(leaf_probabilities(tree).sum() - 1) <= 1e-10
    assert abs(tree.leaf_prob.sum() - 1) <= 1e-10


def test_from_nodes_roundtrip_with_string_ids():
    nodes = [
        {"id": "r", "time_index": 0, "price": [10.0], "children": [{"id": "a", "prob": 0.25},
                                                                     {"id": "b", "prob": 0.75}]},
        {"id": "a", "time_index": 1, "price": [11.0]},
        {"id": "b", "time_index": 1, "price": [10.0]},
    ]
    tree = ScenarioTree.from_nodes(nodes, "r")
    assert tree.n_nodes == 3 and tree.depth == 1
    np.testing.assert_array_equal(tree.leaf_prob, [0.25, 0.75])
    np.testing.assert_array_equal(tree.scenario_prices[:, :, 0], [[10, 11], [10, 10]])


def test_from_nodes_unknown_child():
    with pytest.raises(ValueError, match="unknown child"):
        ScenarioTree.from_nodes([{"id": 0, "time_index": 0, "price": [1.0],
                                  "children": [{"id": 9, "prob": 1.0}]}], 0)


def test_tree_is_immutable():
    tree = two_step_binomial()
    with pytest.raises(ValueError):
        tree.prices[0, 0] = 5.0


def test_price_path_validation():
    PricePath([0.0, 1.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        PricePath([0.0, 1.0], [1.0, -2.0])
    with pytest.raises(ValueError):
        PricePath([0.5, 1.0], [1.0, 2.0])
    with pytest.raises(DimensionError):
        PricePath([0.0, 1.0, 2.0], [1.0, 2.0])


def test_ensemble_requires_shared_grid():
    with pytest.raises(DimensionError):
        PathEnsemble([0.0, 1.0], np.ones((3, 4, 1)))
    ens = PathEnsemble([0.0, 1.0], np.ones((3, 2)))
    assert (ens.n_paths, ens.n_steps, ens.d) == (3, 1, 1)
    assert len(list(ens.paths)) == 3


def test_epsilon_params():
    p = EpsilonParams.from_target(15.0)
    assert p.eps_working == pytest.approx(1.0, abs=1e-15)
    assert abs((1 + EpsilonParams.from_target(0.1).eps_working) ** 4 - 1.1) <= 1e-12
    with pytest.raises(ValueError):
        EpsilonParams(0.1, 0.1)
    with pytest.raises(ValueError):
        EpsilonParams.from_target(0.0)
