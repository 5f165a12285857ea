import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from oracles import cone_oracle, leaf_paths
from stickycps.emm import (BoundWarning, InfeasibleNodeError, NodeSupport, assemble_measure,
                           build_measure, check_conditions, node_supports,
                           ri_conv_contains_zero, solve_all, solve_node_emm, verify_martingale)
from stickycps.simplex import LPInfeasible, LPUnbounded, max_min_weights, solve_standard
from stickycps.simulate import (TreeGenConfig, build_increasing_tree, build_plain_tree,
                                build_sticky_tree)
from stickycps.skeleton import build_skeleton


# ---- simplex ---------------------------------------------------------------

def test_simplex_matches_highs_on_random_lps():
    rng = np.random.default_rng(0)
    for _ in range(50):
        m, n = rng.integers(1, 4), rng.integers(3, 7)
        A = rng.normal(size=(m, n))
        x0 = rng.uniform(0.1, 1, size=n)
        b = A @ x0
        c = rng.uniform(0.1, 2, size=n)
        x, obj = solve_standard(c, A, b)
        ref = linprog(c, A_eq=A, b_eq=b, bounds=[(0, None)] * n, method="highs")
        assert obj == pytest.approx(ref.fun, rel=1e-8, abs=1e-10)
        np.testing.assert_allclose(A @ x, b, atol=1e-9)
        assert x.min() >= -1e-12


def test_simplex_infeasible_and_unbounded():
    with pytest.raises(LPInfeasible):
        solve_standard([1.0, 1.0], [[1.0, 1.0]], [-1.0])
    with pytest.raises(LPUnbounded):
        solve_standard([-1.0, 0.0], [[1.0, -1.0]], [0.0])


def test_max_min_weights_symmetric_pair():
    w, t = max_min_weights(np.array([[1.0], [-1.0]]))
    np.testing.assert_allclose(w, [0.5, 0.5])
    assert t == pytest.approx(0.5)
    assert max_min_weights(np.array([[1.0], [2.0]]))[0] is None


# ---- relative interior -------------------------------------------------------

def test_ri_examples():
    ok, w = ri_conv_contains_zero([[1.0], [-1.0]])
    assert ok and np.allclose(w, [0.5, 0.5])
    ok, y = ri_conv_contains_zero([[1.0], [2.0]])
    assert not ok and y[0] > 0
    assert ri_conv_contains_zero([[0.0]])[0]
    ok, w = ri_conv_contains_zero([[1.0, 0.0], [-1.0, 0.0]])
    assert ok and np.all(w > 0)


def test_ri_separator_is_in_the_span():
    pts = np.array([[1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
    ok, y = ri_conv_contains_zero(pts)
    assert not ok
    assert np.all(pts @ y >= -1e-12) and (pts @ y).max() > 0
    assert y[1] == 0 and y[2] == 0


def test_ri_zero_on_the_boundary_is_rejected():
    # zero is a vertex of the hull, not in its relative interior
    ok, y = ri_conv_contains_zero([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    assert not ok
    assert np.all(np.array([[1.0, 0.0], [0.0, 1.0]]) @ y >= -1e-12)


def test_ri_is_scale_invariant():
    pts = np.array([[3.0, -1.0], [-1.0, 2.0], [-2.0, -1.5]])
    for s in (1e-8, 1.0, 1e8):
        ok, w = ri_conv_contains_zero(pts * s)
        assert ok
        np.testing.assert_allclose(w @ pts, 0, atol=1e-9)
        assert w.sum() == pytest.approx(1)


def test_ri_empty_input():
    with pytest.raises(ValueError):
        ri_conv_contains_zero(np.empty((0, 2)))


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 3), st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_ri_agrees_with_cone_oracle(d, m, seed):
    rng = np.random.default_rng(seed)
    pts = rng.integers(-3, 4, size=(m, d)).astype(float)
    ok, cert = ri_conv_contains_zero(pts)
    ref, _ = cone_oracle(pts)
    assert ok == ref
    if ok:
        assert np.all(cert > 0) and np.abs(cert @ pts).max() <= 1e-9
    else:
        assert np.all(pts @ cert >= -1e-9) and (pts @ cert).max() > 0


# ---- node measures -------------------------------------------------------------

def test_two_atom_measure_is_unique():
    sup = NodeSupport(np.array([[2.0], [-1.0]]), np.array([0.9, 0.1]), np.array([0, 1]))
    nm = solve_node_emm(sup)
    np.testing.assert_allclose(nm.q, [1 / 3, 2 / 3], atol=1e-12)
    np.testing.assert_allclose(nm.z, [1 / 3 / 0.9, 2 / 3 / 0.1], rtol=1e-12)


@pytest.mark.parametrize("p", [0.05, 0.5, 0.93])
def test_symmetric_atoms_give_half(p):
    sup = NodeSupport(np.array([[0.3], [-0.3]]), np.array([p, 1 - p]), np.array([0, 1]))
    np.testing.assert_allclose(solve_node_emm(sup).q, [0.5, 0.5], atol=1e-12)


def test_single_zero_atom():
    sup = NodeSupport(np.zeros((1, 2)), np.ones(1), np.zeros(1, dtype=int))
    nm = solve_node_emm(sup)
    assert nm.q.tolist() == [1.0] and nm.z.tolist() == [1.0]


def test_infeasible_node_carries_certificate():
    sup = NodeSupport(np.array([[1.0], [2.0]]), np.array([0.5, 0.5]), np.array([0, 1]))
    with pytest.raises(InfeasibleNodeError) as info:
        solve_node_emm(sup)
    assert info.value.certificate[0] > 0


def test_max_min_selection_on_three_atoms():
    sup = NodeSupport(np.array([[-1.0], [0.0], [1.0]]), np.array([0.2, 0.6, 0.2]),
                      np.array([0, 1, 2]))
    nm = solve_node_emm(sup)
    np.testing.assert_allclose(nm.q, [1 / 3, 1 / 3, 1 / 3], atol=1e-12)


def test_bounded_density():
    sup = NodeSupport(np.array([[-1.0], [0.0], [1.1]]), np.array([0.3, 0.4, 0.3]),
                      np.array([0, 1, 2]))
    nm = solve_node_emm(sup, eta=0.25)
    assert nm.bound_met and np.abs(nm.z - 1).max() <= 0.25 + 1e-9
    assert abs(nm.q @ sup.xi[:, 0]) <= 1e-12
    with pytest.warns(BoundWarning):
        loose = solve_node_emm(sup, eta=0.01)
    assert not loose.bound_met and abs(loose.q @ sup.xi[:, 0]) <= 1e-12


def test_node_support_merges_duplicates():
    sup = NodeSupport.from_members(np.array([[1.0], [-1.0], [1.0]]), np.array([0.2, 0.5, 0.3]))
    np.testing.assert_array_equal(sup.xi[:, 0], [-1.0, 1.0])
    np.testing.assert_allclose(sup.p, [0.5, 0.5])
    np.testing.assert_array_equal(sup.atom_of, [1, 0, 1])


# ---- conditions and assembly ---------------------------------------------------

def test_conditions_hold_on_sticky_tree(binomial3):
    assert check_conditions(build_skeleton(binomial3, 0.05)) == []


def test_monotone_tree_without_freeze_fails_at_root():
    tree = build_increasing_tree(3, 1.03, freeze=False)
    failures = check_conditions(build_skeleton(tree, 0.0241))
    root = [f for f in failures if f.level == 1 and f.condition == "i"]
    assert root and root[0].anchor_node == 0
    assert root[0].certificate[0] > 0


def test_single_node_tree_is_vacuous():
    tree = build_sticky_tree(TreeGenConfig.binomial(0, 1.1, 0.9))
    assert check_conditions(build_skeleton(tree, 0.1)) == []


def test_condition_iii_and_ii_detected():
    tree = build_plain_tree(TreeGenConfig.binomial(2, 1.1, 0.9, freeze=False))
    failures = check_conditions(build_skeleton(tree, 0.05))
    kinds = {f.condition for f in failures}
    assert "iii" in kinds


def test_assembled_measure_q_equals_p_when_all_atoms_zero():
    tree = build_sticky_tree(TreeGenConfig.binomial(3, 1.001, 0.999, 0.3))
    sk = build_skeleton(tree, 0.5, perturb=False)
    measure = build_measure(sk)
    np.testing.assert_allclose(measure.density, 1.0)
    np.testing.assert_allclose(measure.q_prob, tree.leaf_prob)


def test_assembly_arithmetic_on_one_node():
    # depth-1 tree whose root increments are +2 (p = 0.9) and -1 (p = 0.1)
    tree = build_plain_tree(TreeGenConfig(1, ((1.02,), (0.99,)), s0=100.0, freeze=False,
                                          move_probs=(0.9, 0.1)))
    sk = build_skeleton(tree, 0.01)
    measure = build_measure(sk)
    np.testing.assert_allclose(measure.density, [1 / 3 / 0.9, 2 / 3 / 0.1], rtol=1e-12)
    assert float(tree.leaf_prob @ measure.density) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("bounded", [False, True])
def test_measure_invariants_with_enumeration_oracle(ladder_d2, bounded):
    sk = build_skeleton(ladder_d2, 0.0241)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", BoundWarning)
        supports, measures = solve_all(sk, bounded=bounded)
    measure = assemble_measure(sk, supports, measures)
    # leaf probabilities by recursion, independent of the tree's cached arrays
    p_leaf = np.array([p for _, p in leaf_paths(ladder_d2)])
    assert abs(p_leaf @ measure.density - 1) <= 1e-9
    assert abs(measure.q_prob.sum() - 1) <= 1e-9
    assert np.all(measure.q_prob > 0)
    report = verify_martingale(sk, measure)
    assert report.passed(1e-9)
    assert report.density_residual <= 1e-10
    assert np.isfinite(report.l2_norm) and report.l2_norm > 0
    for level_supports, level_measures in zip(supports, measures):
        for (_, sup), nm in zip(level_supports, level_measures):
            assert np.all(nm.q > 0)
            assert abs(nm.q.sum() - 1) <= 1e-10
            assert np.abs(nm.q @ sup.xi).max(initial=0) <= 1e-10 * max(1, np.abs(sup.xi).max())
            if bounded and nm.bound_met:
                assert np.abs(nm.z - 1).max() <= nm.eta + 1e-9


def test_x_martingale_under_q(ladder_d2):
    sk = build_skeleton(ladder_d2, 0.0241)
    measure = build_measure(sk)
    X = sk.X
    q = measure.q_prob
    for n, lv in enumerate(sk.levels):
        for k in range(lv.n_nodes):
            m = lv.members(k)
            cond = q[m] @ X[m, n + 1] / q[m].sum()
            np.testing.assert_allclose(cond, X[m[0], n], atol=1e-9)


def test_verify_martingale_detects_p_and_perturbations():
    tree = build_plain_tree(TreeGenConfig(1, ((1.02,), (0.99,)), s0=100.0, freeze=False,
                                          move_probs=(0.9, 0.1)))
    sk = build_skeleton(tree, 0.01)
    measure = build_measure(sk)
    as_p = type(measure)(np.ones(2), tree.leaf_prob.copy(), (np.ones(2),))
    assert verify_martingale(sk, as_p).max_residual == pytest.approx(1.7)
    bumped = measure.q_prob + np.array([1e-3, -1e-3])
    skewed = type(measure)(bumped / tree.leaf_prob, bumped, (bumped / tree.leaf_prob,))
    assert verify_martingale(sk, skewed).max_residual >= 1e-4


def test_node_supports_partition_scenarios(ladder_d2):
    sk = build_skeleton(ladder_d2, 0.0241)
    for lv, level_supports in zip(sk.levels, node_supports(sk)):
        seen = np.concatenate([m for m, _ in level_supports])
        assert sorted(seen.tolist()) == list(range(sk.n_scenarios))
