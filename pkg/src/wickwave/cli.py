"""Command-line entry point: one subcommand per experiment plus ``summary``.

Exit status is 0 when every check passes, 2 when a statistical or numerical
check fails, and 1 on configuration or runtime errors.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from typing import Optional, Sequence

from .config import EXPERIMENTS, FORMATS, ConfigError, default_config, load_config
from .dynamics import BlowupError, NoContractionError

ENV_OUT = "WICKWAVE_OUT"
ENV_THREADS = "WICKWAVE_THREADS"

EXIT_PASS, EXIT_ERROR, EXIT_FAIL = 0, 1, 2

log = logging.getLogger("wickwave")


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wickwave", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", metavar="PATH", help="JSON configuration (defaults fill the rest)")
        p.add_argument("--seed", type=_u64, metavar="U64", help="root seed (overrides the config)")
        p.add_argument("--out", metavar="DIR", help=f"output directory (env {ENV_OUT})")
        p.add_argument("--threads", type=_positive, metavar="N", help=f"worker threads (env {ENV_THREADS})")
        p.add_argument("--format", choices=FORMATS, help="table format")
        p.add_argument("--print-config", action="store_true", help="print the resolved configuration and exit")
    p = sub.add_parser("summary", help="aggregate run directories into a Markdown report")
    p.add_argument("paths", nargs="+", metavar="DIR")
    p.add_argument("--output", metavar="PATH", help="write the report here instead of stdout")
    return parser


def resolve(args: argparse.Namespace, environ=os.environ):
    """Configuration and thread count after applying file, flags and environment."""
    cfg = load_config(args.config) if args.config else default_config(args.command)
    if cfg.experiment != args.command:
        raise ConfigError("experiment", f"config is for {cfg.experiment!r}, not {args.command!r}")
    out = args.out or environ.get(ENV_OUT) or None
    cfg = cfg.with_overrides(seed=args.seed, out=out, fmt=args.format)
    threads = args.threads
    if threads is None:
        env = environ.get(ENV_THREADS)
        try:
            threads = int(env) if env else 1
        except ValueError:
            raise ConfigError(ENV_THREADS, f"not an integer: {env!r}") from None
        if threads < 1:
            raise ConfigError(ENV_THREADS, "must be at least 1")
    return cfg, threads


def _run_experiment(args) -> int:
    from .experiments import run
    from .report import write_artifacts, write_blowup

    cfg, threads = resolve(args)
    if args.print_config:
        print(cfg.to_json())
        return EXIT_PASS
    start = time.perf_counter()
    try:
        result = run(cfg, threads)
    except BlowupError as err:
        if err.last_good is not None:
            write_blowup(err, cfg, cfg.output.dir)
        log.error("%s", err)
        return EXIT_ERROR
    files = write_artifacts(result, cfg, cfg.output.dir, time.perf_counter() - start, threads)
    for c in result.checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.value} (target {c.target})")
    log.info("wrote %d files to %s", len(files), cfg.output.dir)
    return EXIT_PASS if result.passed else EXIT_FAIL


def _summary(args) -> int:
    from .report import emit_summary

    text = emit_summary(args.paths)
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_PASS


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "summary":
            return _summary(args)
        return _run_experiment(args)
    except (ConfigError, FileNotFoundError, NoContractionError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
