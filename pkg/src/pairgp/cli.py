"""Command-line front end.

Subcommands: gen-data, run, count-space, check-equiv.  Exit codes: 0 on
success (or verdict true), 1 on verdict false, 2 on usage or validation
errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import dataset as ds
from . import tempering
from .expr import DepthLimits, parse_infix
from .fitness import compile_tree, eval_program
from .tempering import LadderSpec, RunConfig

#: below this reference magnitude the equivalence check compares absolutely
REL_ERROR_FLOOR = 1e-6


class ConfigError(ValueError):
    pass


def parse_config_text(text):
    """Flat `key = value` document; '#' comments and blank lines allowed."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        key = key.strip()
        value = value.strip()
        if not key or not value:
            raise ConfigError(f"line {lineno}: empty key or value")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def _typed(raw, key, kind):
    try:
        if kind is bool:
            low = raw.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        return kind(raw)
    except ValueError:
        raise ConfigError(f"key {key!r}: cannot parse {raw!r} as {kind.__name__}")


_GEN_DATA_KEYS = {
    "n_atoms": int, "box_length": float, "d_min": float, "r_lo": float,
    "r_hi": float, "epsilon": float, "sigma": float, "k_box": int, "seed": int,
}

_RUN_KEYS = {
    "t_min": float, "t_max": float, "n_replicas": int, "scheme": str,
    "adaptive": bool, "adapt_low": float, "adapt_high": float,
    "population_size": int, "k_min": int, "k_max": int, "p_max": int,
    "seed": int, "max_generations": int, "convergence_mse": float,
    "swap_attempts": int, "swap_policy": str, "workers": int,
    "dataset_path": str,
}


def _load_config(path, allowed):
    try:
        with open(path) as fh:
            raw = parse_config_text(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}")
    unknown = set(raw) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return {k: _typed(v, k, allowed[k]) for k, v in raw.items()}


def gen_data_config(path):
    values = _load_config(path, _GEN_DATA_KEYS)
    k_box = values.pop("k_box", 10)
    seed = values.pop("seed", 0)
    return ds.BoxSpec(**values), k_box, seed


def run_config(path):
    values = _load_config(path, _RUN_KEYS)
    ladder = LadderSpec(
        t_min=values.pop("t_min", 0.1),
        t_max=values.pop("t_max", 10.0),
        n_replicas=values.pop("n_replicas", 32),
        scheme=values.pop("scheme", "logarithmic"),
        adaptive=values.pop("adaptive", False),
        adapt_low=values.pop("adapt_low", 0.2),
        adapt_high=values.pop("adapt_high", 0.5),
    )
    limits = DepthLimits(values.pop("k_min", 3), values.pop("k_max", 4))
    return RunConfig(ladder=ladder, limits=limits, **values)


# ---------------------------------------------------------------------------
# equivalence check

@dataclass
class EquivalenceReport:
    r_values: list
    candidate: list
    reference: list
    abs_error: list
    rel_error: list  # None where the reference magnitude is below the floor
    max_rel_error: float
    tolerance: float
    verdict: bool

    def to_json_dict(self):
        def clean(x):
            if x is None or (isinstance(x, float) and math.isfinite(x)):
                return x
            return repr(x)  # inf/nan are not valid JSON numbers
        return {
            "r_values": self.r_values,
            "candidate": [clean(x) for x in self.candidate],
            "reference": self.reference,
            "abs_error": [clean(x) for x in self.abs_error],
            "rel_error": [clean(x) for x in self.rel_error],
            "max_rel_error": clean(self.max_rel_error),
            "tolerance": self.tolerance,
            "verdict": self.verdict,
        }


def check_equivalence(tree, spec=None, n_samples=1001, tolerance=1e-9):
    """Dense numeric comparison of a candidate tree against the LJ oracle."""
    if spec is None:
        spec = ds.BoxSpec()
    if n_samples < 2:
        raise ValueError("n_samples must be >= 2")
    if tolerance <= 0.0:
        raise ValueError("tolerance must be positive")
    prog = compile_tree(tree)
    rs = [float(r) for r in np.linspace(spec.r_lo, spec.r_hi, n_samples)]
    cand = [float(eval_program(prog, r)) for r in rs]
    ref = [ds.lj_pair(r, spec) for r in rs]
    abs_err = [abs(c - t) if math.isfinite(c) else math.inf
               for c, t in zip(cand, ref)]
    rel_err = []
    verdict = True
    max_rel = 0.0
    for c, t, a in zip(cand, ref, abs_err):
        if not math.isfinite(c):
            rel_err.append(None)
            verdict = False
            continue
        if abs(t) > REL_ERROR_FLOOR:
            rel = a / abs(t)
            rel_err.append(rel)
            max_rel = max(max_rel, rel)
            if rel > tolerance:
                verdict = False
        else:
            rel_err.append(None)
            if a > tolerance * spec.epsilon:
                verdict = False
    return EquivalenceReport(rs, cand, ref, abs_err, rel_err, max_rel,
                             tolerance, verdict)


# ---------------------------------------------------------------------------
# subcommands

def cmd_gen_data(args):
    spec, k_box, seed = gen_data_config(args.config)
    data = ds.build_dataset(spec, k_box, seed)
    ds.save(data, args.out)
    counts = [len(c.distances) for c in data.cases]
    print(f"wrote {args.out}: {len(data.cases)} boxes, "
          f"mean {sum(counts) / len(counts):.1f} pair distances per box")
    return 0


def cmd_run(args):
    config = run_config(args.config)
    dataset_path = args.dataset or config.dataset_path
    if not dataset_path:
        raise ConfigError("no dataset: pass --dataset or set dataset_path")
    data = ds.load(dataset_path)
    os.makedirs(args.out_dir, exist_ok=True)
    history_path = os.path.join(args.out_dir, "history.csv")
    result_path = os.path.join(args.out_dir, "result.json")
    with open(history_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(tempering.HISTORY_FIELDS)

        def emit(row):
            writer.writerow(tempering.history_row_values(row))
            fh.flush()

        result = tempering.run(config, data, history_callback=emit)
    doc = {
        "best_tree_infix": result.best_tree_infix,
        "best_fitness": result.best_fitness,
        "best_mse": -result.best_fitness,
        "generation_found": result.generation_found,
        "generations_run": result.history[-1].generation,
        "converged": result.converged,
        "swap_attempts": result.swap_attempts_total,
        "swap_accepts": result.swap_accepts_total,
        "seed": config.seed,
        "config": tempering.config_to_dict(config),
    }
    with open(result_path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")
    print(f"best MSE {-result.best_fitness:.6g} at generation "
          f"{result.generation_found}: {result.best_tree_infix}")
    return 0


def cmd_count_space(args):
    from .expr import count_search_space
    print(count_search_space(args.m, args.k, args.p))
    return 0


def cmd_check_equiv(args):
    text = args.tree
    if text.startswith("@"):
        with open(text[1:]) as fh:
            text = fh.read().strip()
    tree = parse_infix(text)
    spec = ds.BoxSpec(r_lo=args.r_lo, r_hi=args.r_hi)
    report = check_equivalence(tree, spec, n_samples=args.samples,
                               tolerance=args.tolerance)
    if args.report:
        with open(args.report, "w") as fh:
            json.dump(report.to_json_dict(), fh, indent=1)
            fh.write("\n")
    print(f"max relative error {report.max_rel_error:.6g}; "
          f"verdict {'PASS' if report.verdict else 'FAIL'}")
    return 0 if report.verdict else 1


def build_parser():
    parser = argparse.ArgumentParser(
        prog="pairgp",
        description="Rediscover pair-potential functional forms with a "
                    "parallel-tempering genetic program.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="manufacture a training dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("run", help="run the optimization")
    p.add_argument("--config", required=True)
    p.add_argument("--dataset", default=None)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("count-space", help="count the tree search space")
    p.add_argument("m", type=int, help="number of binary operators")
    p.add_argument("k", type=int, help="maximum tree depth")
    p.add_argument("p", type=int, help="constant bound")
    p.set_defaults(func=cmd_count_space)

    p = sub.add_parser("check-equiv",
                       help="numerically compare a tree against the LJ oracle")
    p.add_argument("tree", help="infix expression, or @file to read one")
    p.add_argument("--samples", type=int, default=1001)
    p.add_argument("--tolerance", type=float, default=1e-9)
    p.add_argument("--r-lo", type=float, default=0.7)
    p.add_argument("--r-hi", type=float, default=2.0)
    p.add_argument("--report", default=None)
    p.set_defaults(func=cmd_check_equiv)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
