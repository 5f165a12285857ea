"""A price that can only go up still admits a consistent price system.

Without transaction costs a nondecreasing price is an obvious arbitrage.
With a spread, and as long as the price can also freeze, there is a
martingale inside the bid-ask band.  Removing the freeze branch breaks
this, and the construction reports which node fails and why.
"""
import numpy as np

from stickycps import build_cps, build_increasing_tree

ups = (1.004, 1.012, 1.02, 1.03)
tree = build_increasing_tree(5, ups, freeze_prob=0.3)
assert np.all(np.diff(tree.scenario_prices, axis=1) >= 0)

res = build_cps(tree, 0.1)
print(f"increasing tree with freeze: verdict {res.verdict}")
paths = tree.scenario_paths
moves = np.diff(res.M[paths][:, :, 0], axis=1)
print(f"the shadow price moves down on {np.mean(np.any(moves < 0, axis=1)):.0%} of scenarios, "
      f"which is what lets it be a martingale")

no_freeze = build_increasing_tree(5, ups, freeze=False)
bad = build_cps(no_freeze, 0.1)
first = bad.failures[0]
print(f"\nwithout the freeze branch: verdict {bad.verdict}")
print(f"{len(bad.failures)} failing nodes, the first at level {first.level}, tree node {first.anchor_node}: "
      f"condition ({first.condition}), {first.detail}")

# with a single up move even the first node fails, and a separating functional proves it
single = build_cps(build_increasing_tree(3, 1.03, freeze=False), 0.1).failures[0]
print(f"single 3% up move: condition ({single.condition}) at node {single.anchor_node}, "
      f"separating functional {single.certificate}")

# the perturbation of non-exiting scenarios is essential as well
off = build_cps(tree, 0.1, perturb=False)
print(f"\nwith the freeze branch but no perturbation term: verdict {off.verdict}, "
      f"{len(off.failures)} failing nodes")
