"""Consistent price systems for sticky price processes on scenario trees and path ensembles."""
from .cps import CpsResult, adjust_epsilon, build_cps
from .emm import build_measure, check_conditions, ri_conv_contains_zero, verify_martingale
from .model import (ConfigurationError, ConsistencyError, DimensionError, EpsilonParams,
                    PathEnsemble, PricePath, ScenarioTree, max_norm, validate_tree)
from .simulate import (SimConfig, TreeGenConfig, build_increasing_tree, build_plain_tree,
                       build_sticky_tree, gen_brownian, gen_fbm, gen_increasing_example,
                       ladder_tree_config)
from .skeleton import build_skeleton, compute_tau_sequence, ensemble_skeleton
from .stickiness import (check_lemma_prob, check_strong_stickiness, check_tree_sticky,
                         estimate_stickiness, pool_estimates, sup_abs_brownian_prob,
                         tree_stickiness)

__all__ = [
    "CpsResult", "adjust_epsilon", "build_cps", "build_measure", "check_conditions",
    "ri_conv_contains_zero", "verify_martingale", "ConfigurationError", "ConsistencyError",
    "DimensionError", "EpsilonParams", "PathEnsemble", "PricePath", "ScenarioTree", "max_norm",
    "validate_tree", "SimConfig", "TreeGenConfig", "build_increasing_tree", "build_plain_tree",
    "build_sticky_tree", "gen_brownian", "gen_fbm", "gen_increasing_example",
    "ladder_tree_config", "build_skeleton", "compute_tau_sequence", "ensemble_skeleton",
    "check_lemma_prob", "check_strong_stickiness", "check_tree_sticky", "estimate_stickiness",
    "pool_estimates", "sup_abs_brownian_prob", "tree_stickiness",
]
