"""Readers and writers for trees, path ensembles, skeletons, measures and CPS reports.

Floats are written with ``repr`` (shortest round-trip form), so every file
is a deterministic function of its inputs and reads back bit-exactly.
"""
from __future__ import annotations

import csv
import io as _io
import json
import math
from pathlib import Path

import numpy as np

from .model import PathEnsemble, ScenarioTree


class ArtifactError(ValueError):
    """A file could not be parsed; ``location`` names the file and line or field."""

    def __init__(self, location: str, message: str):
        super().__init__(f"{location}: {message}")
        self.location = location


def _num(x):
    x = float(x)
    return None if math.isnan(x) else x


def _vec(a) -> list:
    return [_num(v) for v in np.asarray(a, dtype=float).ravel()]


def dump_json(obj, path) -> None:
    text = json.dumps(obj, indent=1, sort_keys=False, allow_nan=False)
    Path(path).write_text(text + "\n")


def load_json(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ArtifactError(str(path), f"cannot read ({e.strerror})") from None
    if not text.strip():
        raise ArtifactError(str(path), "file is empty")
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise ArtifactError(f"{path} line {e.lineno}", e.msg) from None


# ---- trees ---------------------------------------------------------------

def tree_to_dict(tree: ScenarioTree) -> dict:
    nodes = []
    for k in range(tree.n_nodes):
        nodes.append({
            "id": k,
            "time_index": int(tree.time_index[k]),
            "price": _vec(tree.prices[k]),
            "children": [{"id": c, "prob": p} for c, p in tree.children[k]],
        })
    return {"nodes": nodes, "root": tree.root}


def tree_from_dict(obj, source: str = "tree") -> ScenarioTree:
    try:
        nodes = obj["nodes"]
        root = obj["root"]
    except (KeyError, TypeError):
        raise ArtifactError(source, "expected an object with 'nodes' and 'root'") from None
    if not isinstance(nodes, list) or not nodes:
        raise ArtifactError(source, "'nodes' must be a non-empty list")
    for j, nd in enumerate(nodes):
        missing = [f for f in ("id", "time_index", "price") if f not in nd]
        if missing:
            raise ArtifactError(f"{source} nodes[{j}]", f"missing field(s) {missing}")
    try:
        return ScenarioTree.from_nodes(nodes, root)
    except (ValueError, TypeError, KeyError) as e:
        raise ArtifactError(source, str(e)) from None


def write_tree(tree: ScenarioTree, path) -> None:
    dump_json(tree_to_dict(tree), path)


def read_tree(path) -> ScenarioTree:
    return tree_from_dict(load_json(path), str(path))


# ---- path ensembles ------------------------------------------------------

def ensemble_to_csv(ens: PathEnsemble) -> str:
    buf = _io.StringIO()
    d = ens.d
    buf.write(",".join(["time"] + [f"asset_{i + 1}" for i in range(d)] + ["path_id"]) + "\n")
    times = [repr(float(t)) for t in ens.times]
    for p in range(ens.n_paths):
        vals = ens.values[p].tolist()
        for j, t in enumerate(times):
            buf.write(t + "," + ",".join(map(repr, vals[j])) + f",{p}\n")
    return buf.getvalue()


def write_paths(ens: PathEnsemble, path) -> None:
    Path(path).write_text(ensemble_to_csv(ens))


def read_paths(path, weights=None) -> PathEnsemble:
    """Parse a paths CSV; every path must use the same time grid."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ArtifactError(str(path), f"cannot read ({e.strerror})") from None
    rows = list(csv.reader(_io.StringIO(text)))
    if not rows:
        raise ArtifactError(str(path), "file is empty")
    header = rows[0]
    d = len(header) - 2
    expected = ["time"] + [f"asset_{i + 1}" for i in range(d)] + ["path_id"]
    if d < 1 or header != expected:
        raise ArtifactError(f"{path} line 1", f"bad header {header}")
    if len(rows) == 1:
        raise ArtifactError(str(path), "no data rows")
    order, series = [], {}
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != d + 2:
            raise ArtifactError(f"{path} line {lineno}",
                                f"expected {d + 2} fields, found {len(row)}")
        try:
            t = float(row[0])
            v = [float(x) for x in row[1:-1]]
            pid = int(row[-1])
        except ValueError as e:
            raise ArtifactError(f"{path} line {lineno}", str(e)) from None
        if pid not in series:
            order.append(pid)
            series[pid] = ([], [])
        series[pid][0].append(t)
        series[pid][1].append(v)
    times = series[order[0]][0]
    for pid in order:
        if series[pid][0] != times:
            raise ArtifactError(str(path), f"path {pid} does not share the time grid of path {order[0]}")
    values = np.array([series[pid][1] for pid in order])
    try:
        return PathEnsemble(np.array(times), values, weights=weights)
    except ValueError as e:
        raise ArtifactError(str(path), str(e)) from None


# ---- skeleton ------------------------------------------------------------

def skeleton_to_dict(skeleton) -> dict:
    levels = []
    for lv in skeleton.levels:
        nodes = []
        order = np.argsort(lv.node, kind="stable")
        bounds = np.searchsorted(lv.node[order], np.arange(lv.n_nodes + 1))
        for k in range(lv.n_nodes):
            members = [{
                "scenario_id": int(s),
                "tau_prev": int(lv.tau_prev[s]),
                "tau_next": int(lv.tau_next[s]),
                "s_star": _num(lv.s_star[s]),
                "c_class": int(lv.c_class[s]),
                "xi": _vec(lv.xi[s]),
                "x": _vec(lv.x[s]),
            } for s in order[bounds[k]:bounds[k + 1]]]
            nodes.append({
                "node_id": k,
                "anchor_node": int(lv.anchor_node[k]),
                "anchor_price": _vec(lv.anchor_price[k]),
                "s_bar": _num(lv.s_bar[k]),
                "delta": _num(lv.delta[k]),
                "members": members,
            })
        levels.append({"n": lv.n, "nodes": nodes})
    return {
        "eps_working": skeleton.eps_working,
        "d": skeleton.d,
        "N": skeleton.N,
        "perturb": skeleton.perturb,
        "overshoot": skeleton.overshoot,
        "levels": levels,
    }


# ---- measure -------------------------------------------------------------

def measure_to_dict(skeleton, supports, measure) -> dict:
    nodes = []
    for lv, level_supports, level_measures in zip(skeleton.levels, supports, measure.node_measures):
        for k, ((_, sup), nm) in enumerate(zip(level_supports, level_measures)):
            atoms = [{"xi": _vec(sup.xi[a]), "p": float(sup.p[a]), "q": float(nm.q[a]),
                      "z": float(nm.z[a])} for a in range(len(sup.p))]
            nodes.append({"skeleton_node_id": f"{lv.n}:{k}", "level": lv.n,
                          "anchor_node": int(lv.anchor_node[k]), "atoms": atoms})
    leaves = [{"scenario_id": s, "p": float(skeleton.prob[s]), "L": float(measure.density[s]),
               "q_prob": float(measure.q_prob[s])} for s in range(skeleton.n_scenarios)]
    return {"nodes": nodes, "leaves": leaves}


# ---- CPS report ----------------------------------------------------------

def _failure_dict(f) -> dict:
    if isinstance(f, str):
        return {"detail": f}
    out = {"level": f.level, "node": f.node, "anchor_node": f.anchor_node,
           "condition": f.condition, "detail": f.detail}
    if f.certificate is not None:
        out["certificate"] = _vec(f.certificate)
    return out


def cps_summary(result) -> dict:
    band = None
    worst = None
    if result.band is not None:
        band = {name: {"lower": c.lower, "upper": c.upper, "worst_low": c.worst_low,
                       "worst_high": c.worst_high, "passed": c.passed}
                for name, c in result.band.checks.items()}
        worst = result.band.checks["c"].worst_ratio
    mart = result.max_martingale_residual
    return {
        "verdict": result.verdict,
        "stage": result.stage,
        "eps_target": result.eps_target,
        "eps_working": result.eps_working,
        "worst_band_ratio": worst,
        "max_martingale_residual": None if math.isnan(mart) else mart,
        "expectation_L": None if result.martingale is None else result.martingale.expectation_L,
        "optional_sampling_gap": _num(result.sampling_residual),
        "band": band,
        "failures": [_failure_dict(f) for f in result.failures],
    }


def node_table_csv(tree: ScenarioTree, M: np.ndarray) -> str:
    """``node_id,time_index,asset,S,M,ratio`` with one row per node and asset."""
    lines = ["node_id,time_index,asset,S,M,ratio"]
    for k in range(tree.n_nodes):
        t = int(tree.time_index[k])
        for i in range(tree.d):
            s, m = float(tree.prices[k, i]), float(M[k, i])
            lines.append(f"{k},{t},{i + 1},{s!r},{m!r},{m / s!r}")
    return "\n".join(lines) + "\n"


def read_node_table(path):
    """Parse the per-node CSV into ``{(node_id, asset): (time_index, S, M, ratio)}``."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ArtifactError(str(path), f"cannot read ({e.strerror})") from None
    rows = list(csv.reader(_io.StringIO(text)))
    if not rows or rows[0] != ["node_id", "time_index", "asset", "S", "M", "ratio"]:
        raise ArtifactError(f"{path} line 1", "bad or missing header")
    out = {}
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != 6:
            raise ArtifactError(f"{path} line {lineno}", f"expected 6 fields, found {len(row)}")
        try:
            key = (int(row[0]), int(row[2]))
            out[key] = (int(row[1]), float(row[3]), float(row[4]), float(row[5]))
        except ValueError as e:
            raise ArtifactError(f"{path} line {lineno}", str(e)) from None
    if not text.endswith("\n"):
        raise ArtifactError(f"{path} line {len(rows)}", "truncated final line")
    return out


def stickiness_csv(report) -> str:
    lines = ["cell_id,kind,probability,stderr,flag"]
    for c in report.cells:
        lines.append(f"{c.cell_id},{c.kind},{float(c.probability)!r},{float(c.stderr)!r},{c.flag}")
    return "\n".join(lines) + "\n"
