"""``fleetguard`` command line.

Exit codes: 0 success, 1 usage or configuration error, 2 data validation error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .attacker import scenario_from_json
from .bench import bench_hmac
from .packets import PacketError
from .roadmap import RoadmapError, load_roadmap, write_cache
from .simulator import ConfigError, load_config, read_csv, simulate, summarize, write_report

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _print(doc) -> None:
    print(json.dumps(doc, indent=2, sort_keys=True))


def cmd_preprocess(args) -> int:
    graph = load_roadmap(args.map)
    if args.out:
        write_cache(graph, args.out)
    _print(
        {
            "junctions": len(graph.junctions),
            "roads": len(graph.roads),
            "sampled_points": graph.sample_count,
            "road_pairs": len(graph.road_pair_junction),
        }
    )
    return EXIT_OK


def _run(cfg, args) -> int:
    if args.seed is not None:
        cfg.seed = args.seed
    if args.t_auth is not None:
        cfg.t_auth = args.t_auth
    cfg.validate()
    report = simulate(cfg)
    json_path, csv_path = write_report(report, args.out)
    _print({"report": str(json_path), "outcomes": str(csv_path), "summary": report.summary})
    return EXIT_OK


def cmd_simulate(args) -> int:
    return _run(load_config(args.config), args)


def cmd_attack(args) -> int:
    cfg = load_config(args.config)
    try:
        doc = json.loads(Path(args.scenario).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{args.scenario}: {exc}") from None
    docs = doc if isinstance(doc, list) else [doc]
    try:
        cfg.scenarios = cfg.scenarios + [scenario_from_json(d) for d in docs]
    except ValueError as exc:
        raise ConfigError(f"{args.scenario}: {exc}") from None
    return _run(cfg, args)


def cmd_evaluate(args) -> int:
    summary = summarize(read_csv(args.csv))
    if args.out:
        Path(args.out).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    _print(summary)
    return EXIT_OK


def cmd_bench(args) -> int:
    if args.iterations < 1000:
        raise ConfigError("--iterations must be at least 1000")
    _print(bench_hmac(args.iterations, args.seed))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fleetguard", description="GPS spoofing detection for vehicle fleets")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("preprocess", help="validate a roadmap and write the preprocessed cache")
    s.add_argument("map", help="roadmap JSON file")
    s.add_argument("--out", help="where to write the preprocessed graph")
    s.set_defaults(func=cmd_preprocess)

    for name, func, helptext in (
        ("simulate", cmd_simulate, "run the trip/detector experiment from a config file"),
        ("attack", cmd_attack, "like simulate, adding the scenarios from --scenario"),
    ):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--config", required=True)
        if name == "attack":
            s.add_argument("--scenario", required=True, help="scenario JSON (object or list)")
        s.add_argument("--out", required=True, help="output directory for report.json and outcomes.csv")
        s.add_argument("--seed", type=int, help="override the config seed")
        s.add_argument("--t-auth", type=int, help="packets to authenticate after a flag")
        s.set_defaults(func=func)

    s = sub.add_parser("evaluate", help="recompute summary statistics from an outcomes CSV")
    s.add_argument("csv")
    s.add_argument("--out", help="also write the summary JSON here")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("bench-hmac", help="time HMAC-SHA-512 sign/verify")
    s.add_argument("--iterations", type=int, default=10_000)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"fleetguard: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (RoadmapError, PacketError) as exc:
        print(f"fleetguard: invalid data: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"fleetguard: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"fleetguard: invalid data: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
