"""Command line entry point.

Exit codes: 0 success, 2 configuration error, 3 diagnostic failure.
"""
from __future__ import annotations

import argparse
import sys
import warnings

from .experiments import COMMANDS, ConfigError, load_config, materialize, replay, run, write_outputs

EXIT_OK, EXIT_CONFIG, EXIT_DIAGNOSTIC = 0, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="freepressure", description="Free pressure and free entropy experiments.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS + ("replay",):
        s = sub.add_parser(name)
        s.add_argument("--config", metavar="PATH", help="JSON config (defaults used when omitted)")
        s.add_argument("--seed", type=_u64, metavar="U64", help="master seed, overrides the config")
        s.add_argument("--out", metavar="DIR", default="results", help="output directory")
        s.add_argument("--jobs", type=_positive, metavar="K", default=1, help="worker processes")
        if name == "replay":
            s.add_argument("--results", metavar="PATH", required=True, help="metrics.jsonl to replay from")
            s.add_argument("--hash", dest="chash", metavar="HASH", required=True, help="config hash to replay")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    with warnings.catch_warnings():
        # mixing problems surface through the exit code instead
        warnings.simplefilter("ignore")
        return _dispatch(args)


def _dispatch(args) -> int:
    try:
        if args.command == "replay":
            rep = replay(args.results, args.chash, args.seed, args.jobs)
            for metric, old, new, passed in rep.checks:
                print(f"{'ok  ' if passed else 'FAIL'} {metric}: recorded={old} replayed={new}")
            return EXIT_OK if rep.ok else EXIT_DIAGNOSTIC
        cfg = materialize(args.command, load_config(args.config) if args.config else {}, args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    result = run(cfg, args.jobs)
    for path in write_outputs(result, args.out):
        print(path)
    for r in result.records:
        se = "" if not r.stderr else f" +- {r.stderr:.3g}"
        print(f"{r.metric} = {r.value}{se}")
    if not result.ok:
        print("diagnostics failed: chains did not mix or solver did not converge", file=sys.stderr)
        return EXIT_DIAGNOSTIC
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
