"""Command-line front end.

Exit codes: 0 pass, 1 hypothesis or verification failure, 2 usage or
configuration error, 3 corrupted artifacts.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import artifacts, audit, config
from .cps import build_cps
from .emm import node_supports
from .model import ScenarioTree
from .simulate import (SimConfig, TreeGenConfig, build_increasing_tree, build_plain_tree,
                       build_sticky_tree, gen_brownian, gen_fbm, gen_increasing_example,
                       ladder_tree_config)
from .stickiness import estimate_stickiness, tree_stickiness

EXIT_PASS, EXIT_FAIL, EXIT_USAGE, EXIT_CORRUPT = 0, 1, 2, 3
DEFAULT_TOL = 1e-9

log = logging.getLogger("stickycps")


class UsageError(Exception):
    pass


def _opt(section: dict, key: str, default=None, required=False, where=""):
    if key in section:
        return section[key]
    if required:
        raise UsageError(f"missing required key {key!r}{where}")
    return default


def make_ensemble(sec: dict, seed):
    model = _opt(sec, "model", "brownian")
    if model not in config.SIM_MODELS:
        raise UsageError(f"unknown simulate model {model!r}; choose from {config.SIM_MODELS}")
    kwargs = {k: sec[k] for k in ("n_steps", "n_paths", "horizon", "d", "hurst", "volatility",
                                  "drift", "s0") if k in sec}
    if "correlation" in sec:
        kwargs["correlation"] = np.asarray(sec["correlation"], dtype=float)
    cfg = SimConfig(seed=seed, **kwargs)
    if model == "brownian":
        return gen_brownian(cfg)
    if model == "gbm":
        return gen_brownian(cfg, geometric=True)
    if model in ("fbm", "fbm_exp"):
        return gen_fbm(cfg, positive=model == "fbm_exp")
    return gen_increasing_example(cfg)


def make_tree(sec: dict) -> ScenarioTree:
    model = _opt(sec, "model", "sticky")
    if model not in config.TREE_MODELS:
        raise UsageError(f"unknown tree model {model!r}; choose from {config.TREE_MODELS}")
    depth = _opt(sec, "depth", required=True, where=" in [tree]")
    d = _opt(sec, "d", 1)
    s0 = _opt(sec, "s0", 100.0)
    phi = _opt(sec, "freeze_prob", 0.2)
    if model == "increasing":
        return build_increasing_tree(depth, _opt(sec, "up", required=True, where=" in [tree]"),
                                     phi, s0, d, _opt(sec, "freeze", True))
    if model == "ladder":
        cfg = ladder_tree_config(depth, d, _opt(sec, "top", required=True, where=" in [tree]"),
                                 phi, _opt(sec, "direction"), s0, _opt(sec, "both_ways", False))
        return build_sticky_tree(cfg)
    up = _opt(sec, "up", 1.1)
    if isinstance(up, list):
        raise UsageError("binomial trees take a single 'up' factor")
    down = _opt(sec, "down", 1.0 / up)
    freeze = model == "sticky" and _opt(sec, "freeze", True)
    cfg = TreeGenConfig.binomial(depth, up, down, phi, s0, d, freeze=freeze)
    return build_sticky_tree(cfg) if freeze else build_plain_tree(cfg)


def _out_dir(cfg) -> Path:
    out = Path(cfg["global"].get("out", "out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(cfg) -> int:
    sec = cfg.get("simulate", {})
    seed = cfg["global"].get("seed", 0)
    ens = make_ensemble(sec, seed)
    out = _out_dir(cfg)
    artifacts.write_paths(ens, out / "paths.csv")
    meta = {"model": _opt(sec, "model", "brownian"), "seed": seed, "n_paths": ens.n_paths,
            "n_steps": ens.n_steps, "d": ens.d, "config": sec}
    artifacts.dump_json(meta, out / "paths.meta.json")
    print(f"wrote {ens.n_paths} paths x {ens.n_steps + 1} points to {out / 'paths.csv'}")
    return EXIT_PASS


def cmd_tree(cfg) -> int:
    tree = make_tree(cfg.get("tree", {}))
    out = _out_dir(cfg)
    artifacts.write_tree(tree, out / audit.TREE_FILE)
    print(f"wrote tree with {tree.n_nodes} nodes to {out / audit.TREE_FILE}")
    return EXIT_PASS


def _load_tree_input(path) -> ScenarioTree:
    try:
        return artifacts.read_tree(path)
    except artifacts.ArtifactError as e:
        raise UsageError(f"bad tree input: {e}") from None


def cmd_cps(cfg) -> int:
    sec = cfg.get("cps", {})
    eps = _opt(sec, "eps", required=True, where=" (set [cps] eps or pass --eps)")
    if not eps > 0:
        raise UsageError("eps must be positive")
    if "tree" in sec:
        tree = _load_tree_input(sec["tree"])
    elif "tree" in cfg:
        tree = make_tree(cfg["tree"])
    else:
        raise UsageError("no tree: set [cps] tree = <file> or add a [tree] section")
    result = build_cps(tree, eps, perturb=_opt(sec, "perturb", True),
                       bounded=_opt(sec, "bounded", False))
    if result.verdict == "invalid":
        raise UsageError("invalid tree: " + "; ".join(result.failures[:3]))
    out = _out_dir(cfg)
    for stale in (audit.MEASURE_FILE, audit.NODES_FILE):
        (out / stale).unlink(missing_ok=True)
    artifacts.write_tree(tree, out / audit.TREE_FILE)
    artifacts.dump_json(artifacts.skeleton_to_dict(result.skeleton), out / audit.SKELETON_FILE)
    if result.measure is not None:
        supports = node_supports(result.skeleton)
        artifacts.dump_json(artifacts.measure_to_dict(result.skeleton, supports, result.measure),
                            out / audit.MEASURE_FILE)
        (out / audit.NODES_FILE).write_text(artifacts.node_table_csv(tree, result.M))
    artifacts.dump_json(artifacts.cps_summary(result), out / audit.SUMMARY_FILE)
    print(f"verdict: {result.verdict} (eps={eps:g}, {tree.n_nodes} nodes)")
    for f in result.failures[:5]:
        print(f"  failure: {getattr(f, 'condition', '')} {getattr(f, 'detail', f)}")
    return EXIT_PASS if result.passed else EXIT_FAIL


def cmd_sticky(cfg) -> int:
    sec = cfg.get("sticky", {})
    delta = _opt(sec, "delta", required=True, where=" in [sticky]")
    if not delta > 0:
        raise UsageError("delta must be positive")
    t = _opt(sec, "t")
    src = sec.get("input")
    if src is not None and not src.endswith(".csv"):
        tree = _load_tree_input(src)
    elif src is None and "tree" in cfg:
        tree = make_tree(cfg["tree"])
    else:
        tree = None
    if tree is not None:
        report = tree_stickiness(tree, delta, t)
    else:
        if src is not None:
            try:
                ens = artifacts.read_paths(src)
            except artifacts.ArtifactError as e:
                raise UsageError(f"bad paths input: {e}") from None
        else:
            ens = make_ensemble(cfg.get("simulate", {}), cfg["global"].get("seed", 0))
        report = estimate_stickiness(ens, t or 0, delta, _opt(sec, "bundling", "global"),
                                     _opt(sec, "radius"))
    out = _out_dir(cfg)
    (out / "sticky.csv").write_text(artifacts.stickiness_csv(report))
    print(f"{len(report)} cells, {len(report.zero_cells)} with probability zero")
    return EXIT_PASS if report.passed else EXIT_FAIL


def cmd_verify(cfg) -> int:
    directory = cfg.get("verify", {}).get("dir", cfg["global"].get("out", "out"))
    tol = cfg["global"].get("tolerance", DEFAULT_TOL)
    if not Path(directory).is_dir():
        raise UsageError(f"artifact directory {directory} does not exist")
    results, verdict = audit.verify_directory(directory, tol)
    for r in results:
        print(f"{'ok  ' if r.passed else 'FAIL'} {r.name}" + (f": {r.message}" if not r.passed else ""))
    failed = [r for r in results if not r.passed]
    if failed:
        print(f"corrupted artifacts: check {failed[0].name!r} failed", file=sys.stderr)
        return EXIT_CORRUPT
    return EXIT_PASS if verdict == "pass" else EXIT_FAIL


COMMANDS = {"simulate": cmd_simulate, "tree": cmd_tree, "cps": cmd_cps, "sticky": cmd_sticky,
            "verify": cmd_verify}

HELP = {
    "simulate": "generate a path ensemble (paths.csv, paths.meta.json)",
    "tree": "generate a scenario tree (tree.json)",
    "cps": "construct and verify a consistent price system on a tree",
    "sticky": "stickiness probabilities for a tree or a path ensemble (sticky.csv)",
    "verify": "re-check stored cps artifacts",
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML experiment file")
    common.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--eps", type=float, help="target spread for cps")
    common.add_argument("--tolerance", type=float, help="numerical tolerance for verify")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="stickycps", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=HELP[name])
    return parser


def _apply_flags(cfg: dict, args) -> dict:
    g = cfg["global"]
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise UsageError("--seed must be an unsigned 64-bit integer")
        g["seed"] = args.seed
    if args.out is not None:
        g["out"] = args.out
    if args.tolerance is not None:
        g["tolerance"] = args.tolerance
    if args.eps is not None:
        cfg.setdefault("cps", {})["eps"] = args.eps
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_PASS
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = _apply_flags(config.load(args.config, args.command), args)
        return COMMANDS[args.command](cfg)
    except (UsageError, ValueError, FloatingPointError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
