"""Re-validation of stored pipeline artifacts.

Every check re-derives what it can from the files on disk and compares with
what was written.  Nothing here trusts the summary's own verdict.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .artifacts import ArtifactError, load_json, read_node_table, read_tree
from .emm import check_conditions
from .model import validate_tree
from .skeleton import build_skeleton

TREE_FILE = "tree.json"
SKELETON_FILE = "skeleton.json"
MEASURE_FILE = "measure.json"
SUMMARY_FILE = "cps.json"
NODES_FILE = "cps_nodes.csv"


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    message: str = ""


class _Audit:
    def __init__(self, tol: float):
        self.tol = tol
        self.results: list[CheckResult] = []

    def record(self, name, ok, message=""):
        self.results.append(CheckResult(name, bool(ok), message))
        return ok


def _skeleton_check(audit, tree, stored, eps_w, perturb):
    sk = build_skeleton(tree, eps_w, perturb=perturb)
    if len(stored["levels"]) != sk.K:
        return audit.record("skeleton", False, f"{len(stored['levels'])} levels stored, {sk.K} rebuilt"), sk
    for lv, slv in zip(sk.levels, stored["levels"]):
        if len(slv["nodes"]) != lv.n_nodes:
            return audit.record("skeleton", False, f"level {lv.n}: node count differs"), sk
        for k, nd in enumerate(slv["nodes"]):
            if nd["anchor_node"] != int(lv.anchor_node[k]):
                return audit.record("skeleton", False, f"level {lv.n} node {k}: anchor differs"), sk
            if abs(nd["s_bar"] - lv.s_bar[k]) > audit.tol or abs(nd["delta"] - lv.delta[k]) > audit.tol:
                return audit.record("skeleton", False, f"level {lv.n} node {k}: s_bar/delta differ"), sk
            for mem in nd["members"]:
                s = mem["scenario_id"]
                if (mem["tau_next"] != lv.tau_next[s] or mem["c_class"] != lv.c_class[s]
                        or lv.node[s] != k
                        or np.abs(np.asarray(mem["xi"]) - lv.xi[s]).max() > audit.tol
                        or np.abs(np.asarray(mem["x"]) - lv.x[s]).max() > audit.tol):
                    return audit.record(
                        "skeleton", False, f"level {lv.n} scenario {s}: stored values differ"), sk
    return audit.record("skeleton", True), sk


def _measure_checks(audit, sk, stored):
    tol = audit.tol
    nodes = stored["nodes"]
    leaves = stored["leaves"]
    bad_q = [nd["skeleton_node_id"] for nd in nodes
             if any(not (a["q"] > 0 and a["p"] > 0) for a in nd["atoms"])]
    bad_leaf = [lf["scenario_id"] for lf in leaves
                if not (lf["q_prob"] > 0 and lf["p"] > 0 and lf["L"] > 0)]
    audit.record("equivalence", not bad_q and not bad_leaf,
                 f"zero or negative mass at nodes {bad_q[:5]} leaves {bad_leaf[:5]}"
                 if bad_q or bad_leaf else "")
    norm = [nd["skeleton_node_id"] for nd in nodes
            if abs(sum(a["q"] for a in nd["atoms"]) - 1) > tol
            or abs(sum(a["p"] for a in nd["atoms"]) - 1) > tol]
    q_total = sum(lf["q_prob"] for lf in leaves)
    audit.record("normalisation", not norm and abs(q_total - 1) <= tol,
                 f"nodes {norm[:5]}, total Q mass {q_total!r}" if norm or abs(q_total - 1) > tol else "")
    worst = 0.0
    for nd in nodes:
        m = sum(a["q"] * np.asarray(a["xi"]) for a in nd["atoms"])
        worst = max(worst, float(np.abs(m).max()))
    audit.record("martingale", worst <= tol, f"max |E_Q[xi | node]| = {worst:.3e}")
    dens = max((abs(a["z"] * a["p"] - a["q"]) for nd in nodes for a in nd["atoms"]), default=0.0)
    e_l = sum(lf["p"] * lf["L"] for lf in leaves)
    qp = max((abs(lf["p"] * lf["L"] - lf["q_prob"]) for lf in leaves), default=0.0)
    audit.record("density", dens <= tol and qp <= tol and abs(e_l - 1) <= tol,
                 f"z-gap {dens:.3e}, Q-leaf gap {qp:.3e}, E_P[L] = {e_l!r}")
    if len(leaves) != sk.n_scenarios:
        return audit.record("measure-skeleton", False, "leaf count differs from the skeleton")
    n_nodes = sum(lv.n_nodes for lv in sk.levels)
    if len(nodes) != n_nodes:
        return audit.record("measure-skeleton", False, "node count differs from the skeleton")
    return audit.record("measure-skeleton", True)


def _node_table_checks(audit, tree, table, eps_target, leaves):
    tol = audit.tol
    missing = [(k, i + 1) for k in range(tree.n_nodes) for i in range(tree.d)
               if (k, i + 1) not in table]
    if missing:
        return audit.record("node-table", False, f"missing rows for (node, asset) {missing[:3]}")
    M = np.empty((tree.n_nodes, tree.d))
    for (k, a), (t, s, m, ratio) in table.items():
        if not 0 <= k < tree.n_nodes or not 1 <= a <= tree.d:
            return audit.record("node-table", False, f"unknown node/asset ({k}, {a})")
        if t != tree.time_index[k] or s != tree.prices[k, a - 1] or abs(ratio - m / s) > tol:
            return audit.record("node-table", False, f"row ({k}, {a}) disagrees with the tree")
        M[k, a - 1] = m
    audit.record("node-table", True)
    ratio = M / tree.prices
    lo, hi = 1 / (1 + eps_target), 1 + eps_target
    audit.record("band", ratio.min() >= lo - tol and ratio.max() <= hi + tol,
                 f"M/S in [{ratio.min()!r}, {ratio.max()!r}], band [{lo!r}, {hi!r}]")
    q_leaf = np.array([lf["q_prob"] for lf in leaves])
    q_node = np.zeros(tree.n_nodes)
    paths = tree.scenario_paths
    for t in range(paths.shape[1]):
        np.add.at(q_node, paths[:, t], q_leaf)
    worst = 0.0
    for k, kids in enumerate(tree.children):
        if kids and q_node[k] > 0:
            ids = [c for c, _ in kids]
            worst = max(worst, float(np.abs(q_node[ids] @ M[ids] / q_node[k] - M[k]).max()))
    audit.record("shadow-martingale", worst <= tol, f"max one-step residual {worst:.3e}")


def verify_directory(directory, tol: float = 1e-9) -> tuple[list[CheckResult], str | None]:
    """Run all checks on a ``cps`` output directory.

    Returns the check results and the stored verdict (None if unreadable).
    Parse failures are reported as failed checks named after the file.
    """
    d = Path(directory)
    audit = _Audit(tol)
    try:
        summary = load_json(d / SUMMARY_FILE)
        verdict = summary["verdict"]
        eps_target = float(summary["eps_target"])
        eps_w = float(summary["eps_working"])
    except ArtifactError as e:
        audit.record("summary", False, str(e))
        return audit.results, None
    except (KeyError, TypeError, ValueError) as e:
        audit.record("summary", False, f"{d / SUMMARY_FILE}: missing or bad field {e}")
        return audit.results, None
    ok_eps = abs((1 + eps_w) ** 4 - (1 + eps_target)) <= 1e-12 * (1 + eps_target)
    audit.record("summary", ok_eps, "" if ok_eps else "eps_working inconsistent with eps_target")

    try:
        tree = read_tree(d / TREE_FILE)
    except ArtifactError as e:
        audit.record("tree", False, str(e))
        return audit.results, verdict
    problems = validate_tree(tree)
    if not audit.record("tree", not problems, "; ".join(problems[:3])):
        return audit.results, verdict

    try:
        stored_sk = load_json(d / SKELETON_FILE)
        ok, sk = _skeleton_check(audit, tree, stored_sk, eps_w, bool(stored_sk["perturb"]))
    except ArtifactError as e:
        audit.record("skeleton", False, str(e))
        return audit.results, verdict
    except (KeyError, TypeError, IndexError) as e:
        audit.record("skeleton", False, f"{d / SKELETON_FILE}: malformed ({e})")
        return audit.results, verdict

    conditions_hold = not check_conditions(sk)
    audit.record("verdict", conditions_hold == (verdict in ("pass", "fail")),
                 f"stored verdict {verdict!r} but conditions {'hold' if conditions_hold else 'fail'}")
    if verdict not in ("pass", "fail"):
        return audit.results, verdict

    try:
        stored_m = load_json(d / MEASURE_FILE)
        _measure_checks(audit, sk, stored_m)
        table = read_node_table(d / NODES_FILE)
    except ArtifactError as e:
        audit.record(Path(e.location.split(" ")[0]).name, False, str(e))
        return audit.results, verdict
    except (KeyError, TypeError) as e:
        audit.record("measure", False, f"{d / MEASURE_FILE}: malformed ({e})")
        return audit.results, verdict
    _node_table_checks(audit, tree, table, eps_target, stored_m["leaves"])
    return audit.results, verdict
