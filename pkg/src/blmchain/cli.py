"""Command-line entry point.

Subcommands: gen-tsp, solve-exact, mine, simulate, validate, report.
Exit codes: 0 success, 1 validation failure, 2 usage/config/parse error.
Every run with an explicit --seed is reproducible.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import chain as chaincore
from . import engine, simulate, storage, tsp
from .continuous import continuous_problem
from .tsp import TspProblem

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_USAGE = 2


def _err(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return EXIT_USAGE


def cmd_gen_tsp(args) -> int:
    if args.n < 2:
        return _err("--n must be at least 2")
    instance = tsp.generate_instance(args.n, args.seed)
    tsp.save_instance(instance, args.out)
    print(f"wrote {instance.n}-city instance '{instance.name}' to {args.out}")
    return EXIT_OK


def cmd_solve_exact(args) -> int:
    try:
        instance = tsp.load_instance(args.instance)
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        return _err(f"cannot load instance: {exc}")
    try:
        route, length = tsp.held_karp(instance, cap=args.cap)
    except tsp.InstanceTooLarge as exc:
        return _err(str(exc))
    print(f"{length:.6f}")
    print("route: 0 -> " + " -> ".join(str(c) for c in route) + " -> 0")
    return EXIT_OK


def _build_config(args) -> simulate.SimConfig:
    obj = {}
    root = None
    if args.config:
        path = Path(args.config)
        obj = json.loads(path.read_text(encoding="utf-8"))
        if not isinstance(obj, dict):
            raise simulate.ConfigError("config must be a JSON object")
        root = path.parent
    if args.instance:
        obj["problem"] = {"kind": "tsp", "instance": args.instance}
        root = None
    elif args.continuous:
        obj["problem"] = {"kind": "continuous", "name": args.continuous}
    for key in ("miners", "blocks", "seed", "speed", "latency_ms",
                "sample_budget", "mode"):
        value = getattr(args, key, None)
        if value is not None:
            obj[key] = value
    diff = obj.setdefault("difficulty", {})
    for flag, key in (("k0", "k0"), ("k_min", "k_min"), ("k_max", "k_max"),
                      ("low", "low_s"), ("high", "high_s"),
                      ("window", "window"), ("t", "t"),
                      ("cert_samples", "cert_samples"),
                      ("cert_scale", "cert_scale"),
                      ("sig_figs", "sig_figs"), ("delta", "delta")):
        value = getattr(args, flag, None)
        if value is not None:
            diff[key] = value
    if args.fraud_height:
        obj["fraud_heights"] = list(args.fraud_height)
    return simulate.config_from_json(obj, root)


def _write_run_artifacts(result, out_dir: Path, plot: bool,
                         exact: float | None) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    storage.save_chain(result.chain, out_dir / "chain.json")
    storage.write_results_csv(result.records, out_dir / "results.csv")
    storage.write_rejections_csv(result.rejections,
                                 out_dir / "rejections.csv")
    print(f"chain:      {out_dir / 'chain.json'}")
    print(f"results:    {out_dir / 'results.csv'}")
    print(f"rejections: {out_dir / 'rejections.csv'}")
    if plot:
        from .report import render_report

        for path in render_report(result.records, out_dir, exact=exact):
            print(f"figure:     {path}")


def cmd_simulate(args) -> int:
    try:
        config = _build_config(args)
    except (OSError, json.JSONDecodeError, simulate.ConfigError,
            ValueError) as exc:
        return _err(f"bad config: {exc}")
    if not args.config and not args.instance and not args.continuous:
        return _err("need --config, --instance, or --continuous")
    result = simulate.run_simulation(config)
    out_dir = Path(args.out_dir)
    best = result.records[-1].chain_best if result.records else float("nan")
    print(f"mined {len(result.records)} blocks with {config.miners} miners "
          f"(seed {config.seed})")
    print(f"chain best: {best!r}")
    exact = None
    if args.exact:
        if isinstance(config.problem, TspProblem):
            try:
                _, exact = tsp.held_karp(config.problem.instance)
                print(f"exact optimum: {exact!r} "
                      f"(gap {best / exact - 1.0:+.4%})")
            except tsp.InstanceTooLarge as exc:
                print(f"exact optimum unavailable: {exc}")
        else:
            print("exact optimum unavailable for this problem")
    _write_run_artifacts(result, out_dir, args.plot, exact)
    return EXIT_OK


def cmd_mine(args) -> int:
    args.miners = 1
    args.mode = "virtual"
    try:
        config = _build_config(args)
    except (OSError, json.JSONDecodeError, simulate.ConfigError,
            ValueError) as exc:
        return _err(f"bad config: {exc}")
    if not args.config and not args.instance and not args.continuous:
        return _err("need --config, --instance, or --continuous")
    result = simulate.run_simulation(config)
    for r in result.records:
        print(f"height {r.height:3d}  k={r.k:2d}  "
              f"time={r.block_time_s:8.3f}s  f={r.pow_value!r}")
    storage.save_chain(result.chain, args.out)
    print(f"wrote {len(result.records)}-block chain to {args.out}")
    return EXIT_OK


def _problem_for_chain(params: chaincore.ChainParams, args):
    kind, _, detail = params.problem.partition(":")
    if kind == "tsp":
        if not args.instance:
            raise simulate.ConfigError(
                "chain mines a TSP instance; pass --instance")
        instance = tsp.load_instance(args.instance)
        if instance.name != detail:
            return None, (f"instance name {instance.name!r} does not match "
                          f"chain problem {params.problem!r}")
        return TspProblem(instance), None
    return continuous_problem(detail), None


def cmd_validate(args) -> int:
    try:
        chn, declared_tip = storage.load_chain(args.chain)
    except storage.StorageError as exc:
        return _err(str(exc))
    try:
        problem, mismatch = _problem_for_chain(chn.params, args)
    except (OSError, ValueError, json.JSONDecodeError,
            simulate.ConfigError) as exc:
        return _err(str(exc))
    if mismatch:
        print(f"INVALID: {mismatch}")
        return EXIT_INVALID
    if chn.tip_id() != declared_tip:
        print(f"INVALID at height {chn.height}: tip commitment mismatch")
        return EXIT_INVALID
    report = chaincore.validate_chain(chn, problem,
                                      validation_budget=args.budget)
    if report.valid:
        print(f"VALID ({len(chn.blocks)} blocks)")
        return EXIT_OK
    print(f"INVALID at height {report.height}: {report.reason}")
    return EXIT_INVALID


def cmd_report(args) -> int:
    from .report import render_report

    try:
        records = storage.read_results_csv(args.results)
    except (OSError, ValueError, storage.StorageError) as exc:
        return _err(f"cannot read results: {exc}")
    for path in render_report(records, args.out_dir, exact=args.exact):
        print(f"figure: {path}")
    return EXIT_OK


def _add_sim_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--instance", help="TSP instance file")
    parser.add_argument("--continuous", metavar="NAME",
                        help="continuous problem (demo, quadratic:N)")
    parser.add_argument("--blocks", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--speed", type=float,
                        help="iterations per virtual second")
    parser.add_argument("--latency-ms", dest="latency_ms", type=int)
    parser.add_argument("--sample-budget", dest="sample_budget", type=int)
    parser.add_argument("--k0", type=int)
    parser.add_argument("--k-min", dest="k_min", type=int)
    parser.add_argument("--k-max", dest="k_max", type=int)
    parser.add_argument("--low", type=float, help="controller low threshold")
    parser.add_argument("--high", type=float, help="controller high threshold")
    parser.add_argument("--window", type=int)
    parser.add_argument("--t", type=int, help="edit-distance threshold")
    parser.add_argument("--cert-samples", dest="cert_samples", type=int)
    parser.add_argument("--cert-scale", dest="cert_scale", type=int)
    parser.add_argument("--sig-figs", dest="sig_figs", type=int)
    parser.add_argument("--delta", type=float)
    parser.add_argument("--fraud-height", dest="fraud_height", type=int,
                        action="append", default=[])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="blmchain",
        description="Blockchain simulator whose proof of work certifies "
                    "bounded local minima of optimization problems.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-tsp", help="generate a seeded TSP instance")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_tsp)

    p = sub.add_parser("solve-exact",
                       help="exact tour by dynamic programming")
    p.add_argument("--instance", required=True)
    p.add_argument("--cap", type=int, default=tsp.HELD_KARP_MAX)
    p.set_defaults(func=cmd_solve_exact)

    p = sub.add_parser("mine", help="single-miner chain building")
    _add_sim_flags(p)
    p.add_argument("--out", default="chain.json")
    p.set_defaults(func=cmd_mine)

    p = sub.add_parser("simulate", help="multi-miner network simulation")
    _add_sim_flags(p)
    p.add_argument("--miners", type=int)
    p.add_argument("--mode", choices=["virtual", "wall"])
    p.add_argument("--out-dir", dest="out_dir", default="simout")
    p.add_argument("--exact", action="store_true",
                   help="also compute the exact optimum and the gap")
    p.add_argument("--plot", action="store_true",
                   help="render figures next to the CSVs")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("validate", help="re-validate a chain file")
    p.add_argument("--chain", required=True)
    p.add_argument("--instance")
    p.add_argument("--budget", type=int, default=1000)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("report", help="render figures from a results csv")
    p.add_argument("--results", required=True)
    p.add_argument("--out-dir", dest="out_dir", default="simout")
    p.add_argument("--exact", type=float)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
