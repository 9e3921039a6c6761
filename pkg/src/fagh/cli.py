"""Command-line entry points.

Subcommands:

* ``run``             — execute one experiment, write the per-round CSV
* ``table``           — rounds-to-target table from one or more run CSVs
* ``partition-stats`` — per-client class histogram of a configured partition
* ``selftest``        — run the built-in verification suites

Every config key is also a ``--key value`` flag; flags override file values.
Exit codes: 0 success, 1 configuration error, 2 runtime error, 3 selftest
failure. The FAGH_OUTPUT_DIR environment variable sets the default output
directory for runs that leave ``output`` blank.
"""

import argparse
import logging
import os
import sys

from . import fedcore, metrics, selftest
from .config import _SCHEMA, ConfigError, ExperimentConfig, parse_config
from .data import IdxFormatError, partition_stats

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_SELFTEST = 3

OUTPUT_DIR_ENV = "FAGH_OUTPUT_DIR"


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("config", nargs="?", default=None,
                        help="config file (key = value lines)")
    for key in _SCHEMA:
        parser.add_argument(f"--{key}", default=None, metavar="V",
                            help=f"override config key {key}")


def _collect_overrides(args) -> dict:
    return {key: getattr(args, key) for key in _SCHEMA
            if getattr(args, key) is not None}


def _output_path(cfg: ExperimentConfig) -> str:
    if cfg.output:
        return cfg.output
    out_dir = os.environ.get(OUTPUT_DIR_ENV, ".")
    return os.path.join(out_dir, f"run_{cfg.algorithm}_seed{cfg.seed}.csv")


def cmd_run(args) -> int:
    try:
        cfg = parse_config(args.config, _collect_overrides(args))
        spec, train, test, partition = fedcore.prepare_experiment(cfg)
    except (ConfigError, IdxFormatError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        state = fedcore.init_state(cfg, spec)
        records = []
        for t in range(1, cfg.rounds + 1):
            state, record = fedcore.run_round(cfg, state, spec, train, test,
                                              partition, t)
            records.append(record)
        out_path = _output_path(cfg)
        metrics.write_csv(records, out_path)
    except Exception as exc:  # numerics, I/O mid-run
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME

    uplink_total = sum(r.uplink_scalars for r in records)
    if records:
        last = records[-1]
        print(f"rounds={len(records)} final_train_loss={last.train_loss:.6g} "
              f"final_test_loss={last.test_loss:.6g} "
              f"final_test_accuracy={last.test_accuracy:.6g} "
              f"uplink_scalars_total={uplink_total} csv={out_path}")
    else:
        print(f"rounds=0 uplink_scalars_total=0 csv={out_path}")
    return EXIT_OK


def cmd_table(args) -> int:
    try:
        targets = [float(t) for t in args.targets.split(",") if t.strip()]
    except ValueError as exc:
        print(f"error: bad --targets: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if not targets or any(not 0.0 <= t <= 1.0 for t in targets):
        print("error: targets must be accuracies in [0, 1]", file=sys.stderr)
        return EXIT_CONFIG

    rows = []
    for path in args.csvs:
        try:
            records = metrics.read_csv(path)
        except (OSError, ValueError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        hits = metrics.rounds_to_target(records, targets)
        rows.append((path, [metrics.format_rounds(h) for h in hits]))

    name_width = max(len("method"), *(len(str(p)) for p, _ in rows))
    header = ["method".ljust(name_width)] + [f"{t:.0%}".rjust(6) for t in targets]
    print("  ".join(header))
    for path, cells in rows:
        print("  ".join([str(path).ljust(name_width)]
                        + [c.rjust(6) for c in cells]))
    return EXIT_OK


def cmd_partition_stats(args) -> int:
    try:
        cfg = parse_config(args.config, _collect_overrides(args))
        _, train, _, partition = fedcore.prepare_experiment(cfg)
    except (ConfigError, IdxFormatError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    table = partition_stats(partition, train)
    C = table.shape[1]
    print("client  total  " + " ".join(f"c{c}".rjust(6) for c in range(C)))
    for cid, row in enumerate(table):
        print(f"{cid:6d}  {row.sum():5d}  "
              + " ".join(f"{int(x):6d}" for x in row))
    return EXIT_OK


def cmd_selftest(_args) -> int:
    return EXIT_OK if selftest.run_all() else EXIT_SELFTEST


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fagh",
        description="Deterministic federated-learning simulator with a "
                    "rank-1 Newton server optimizer and first-order baselines.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment and write its CSV")
    _add_config_flags(p_run)
    p_run.set_defaults(func=cmd_run)

    p_table = sub.add_parser("table",
                             help="rounds-to-target table from run CSVs")
    p_table.add_argument("csvs", nargs="+", help="CSV files written by run")
    p_table.add_argument("--targets", default="0.3,0.35,0.4,0.45",
                         help="comma-separated accuracy targets in [0, 1]")
    p_table.set_defaults(func=cmd_table)

    p_stats = sub.add_parser("partition-stats",
                             help="print the per-client class histogram")
    _add_config_flags(p_stats)
    p_stats.set_defaults(func=cmd_partition_stats)

    p_self = sub.add_parser("selftest", help="run built-in verification suites")
    p_self.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
