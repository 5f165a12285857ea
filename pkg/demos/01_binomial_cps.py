"""Shadow prices on two sticky trees.

Both trees have a freeze branch: from every node there is a positive
chance that nothing moves until the horizon.  With a spread eps we build
a process M inside the band [S/(1+eps), (1+eps) S] that is a martingale
under a measure Q equivalent to P.
"""
import numpy as np

from stickycps import TreeGenConfig, build_cps, build_sticky_tree, ladder_tree_config


def show(name, tree, eps):
    res = build_cps(tree, eps)
    ratio = res.M / tree.prices
    L = res.measure.L
    print(f"{name}: {tree.n_nodes} nodes, verdict {res.verdict}")
    print(f"  M/S in [{ratio.min():.4f}, {ratio.max():.4f}], band [{1 / (1 + eps):.4f}, {1 + eps}]")
    print(f"  dQ/dP in [{L.min():.3f}, {L.max():.3f}], E_P[L] = {np.dot(tree.leaf_prob, L):.12f}")
    print(f"  one-step martingale residual of M under Q: {res.m_residual:.1e}")
    return res


# Every 10% move leaves the band, so the skeleton is the price itself and
# Q is a risk-neutral measure for the binomial tree: M coincides with S.
show("binomial +-10%", build_sticky_tree(TreeGenConfig.binomial(4, 1.1, 0.9, 0.2)), 0.1)

# Small moves in two assets that drift in opposite directions.  No
# risk-neutral measure exists for S here, yet a shadow price does.
tree = build_sticky_tree(ladder_tree_config(3, 2, 0.008, 0.25, [1.0, -1.0], s0=[95.0, 105.0]))
res = show("two-asset ladder", tree, 0.05)
print(f"  root: S_0 = {tree.prices[0]}, M_0 = {np.round(res.M[0], 4)}")
