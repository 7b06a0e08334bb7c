"""Command-line interface.

    somap run <scenario.toml|@default> --out DIR [--backend octree|dense]
    somap query <map.som> --point x,y,z
    somap diff <a.som> <b.som>
    somap env gen <spec.toml> --seed S --out <file.npz>

Exit code 0 on success, 2 on a diagnosed input/domain error, 1 otherwise.
Runs are deterministic: the same scenario file and seed reproduce the
output files byte for byte.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import netsim
from .config import load_environment_request, load_scenario
from .consensus import pairwise_residual
from .environment import generate_environment, save_environment
from .errors import MappingError
from .harness import run_scenario
from .logodds import softmax


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="somap", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--deterministic", action="store_true", default=True,
                   help="fixed-order sequential execution (always on)")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario and write metrics + maps")
    run.add_argument("scenario", help="scenario TOML path, or @default")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--backend", choices=("octree", "dense"), default="octree")

    query = sub.add_parser("query", help="query a stored map at a point")
    query.add_argument("map", help=".som map file")
    query.add_argument("--point", required=True, help="x,y,z in meters")

    diff = sub.add_parser("diff", help="squared-distance residual between two maps")
    diff.add_argument("map_a")
    diff.add_argument("map_b")

    env = sub.add_parser("env", help="environment tools")
    env_sub = env.add_subparsers(dest="env_command", required=True)
    gen = env_sub.add_parser("gen", help="generate a labeled environment")
    gen.add_argument("spec", help="environment spec TOML ([map] + [environment])")
    gen.add_argument("--seed", type=int, required=True)
    gen.add_argument("--out", required=True, help="output .npz path")
    return p


def _cmd_run(args) -> int:
    scenario = load_scenario(args.scenario)
    result = run_scenario(scenario, out_dir=args.out, backend=args.backend)
    last = result.records[-1] if result.records else None
    print(f"ran {scenario.total_ticks} ticks, {len(result.records)} publish rounds")
    if last is not None:
        saving = last.grid_bytes / max(last.octree_bytes_mean, 1.0)
        print(f"final residual (unweighted): {last.residual_unweighted:.6g}")
        print(f"mean payload: {last.octree_bytes_mean:.0f} B vs grid {last.grid_bytes} B "
              f"({saving:.1f}x saving)")
    print(f"wrote {args.out}/metrics.csv")
    return 0


def _cmd_query(args) -> int:
    payload = open(args.map, "rb").read()
    tree = netsim.decode(payload)
    point = tuple(float(v) for v in args.point.split(","))
    if len(point) != 3:
        raise MappingError("--point needs exactly three comma-separated values")
    h, level = tree.query(point)
    probs = softmax(h)
    print(f"resolved at depth level {level}")
    for c, p in enumerate(probs):
        name = "free" if c == 0 else f"class{c}"
        print(f"  {name}: {p:.6f}")
    return 0


def _cmd_diff(args) -> int:
    a = netsim.decode(open(args.map_a, "rb").read())
    b = netsim.decode(open(args.map_b, "rb").read())
    print(f"squared-distance residual: {pairwise_residual([a, b])!r}")
    return 0


def _cmd_env_gen(args) -> int:
    config, spec = load_environment_request(args.spec)
    env = generate_environment(config, spec, args.seed)
    save_environment(env, args.out)
    occupied = int(np.count_nonzero(env.labels))
    print(f"generated {config.cells_per_axis}^3 environment, "
          f"{occupied} occupied cells, {len(env.boxes)} boxes -> {args.out}")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "query":
            return _cmd_query(args)
        if args.command == "diff":
            return _cmd_diff(args)
        if args.command == "env":
            return _cmd_env_gen(args)
        raise MappingError(f"unknown command {args.command!r}")
    except MappingError as e:
        print(f"somap: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
