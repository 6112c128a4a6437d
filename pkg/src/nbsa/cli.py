"""Command-line entry point: ``nbsa <command> [--config PATH] [--set key=value ...] [--out DIR] [--seed N]``.

Exit codes: 0 success, 2 validation error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import config, pipeline, selfcheck
from .errors import ConfigurationError, DimensionError, UndefinedMetricError
from .io import FormatError

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 2, 3

COMMANDS = {
    "gen": "generate the phantom dataset (manifest.csv, train/ and test/ .tns/.msk files)",
    "train": "train TinyUnet on <data_dir>; writes model.ckpt and loss.csv",
    "eval": "evaluate a checkpoint (or oracle=true) on the test split; writes metrics.csv and summary.json",
    "bench": "count attention FLOPs per stage over a size/block grid; writes bench.csv",
    "ablate": "train and evaluate the layers x placement x B x overlap grid; writes ablation.csv",
    "attnmap": "export per-layer attention maps for one query pixel as PGM images",
    "selfcheck": "run the invariant suite (gradients, equivalences, skew oracle, metric oracles)",
}

# the seed flag targets the stream that matters for each command
SEED_KEY = {"train": "train_seed"}


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="nbsa",
        description="Nested-block self-attention segmentation toolkit.",
        epilog="configuration keys (key=value, one per line, # comments):\n" + config.help_text(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = p.add_subparsers(dest="command", required=True, metavar="command")
    for name, text in COMMANDS.items():
        sp = sub.add_parser(name, help=text, description=text)
        sp.add_argument("--config", metavar="PATH", help="key=value config file (e.g. a config.lock)")
        sp.add_argument("--set", metavar="KEY=VALUE", action="append", default=[], dest="overrides", help="override one key (repeatable)")
        sp.add_argument("--out", metavar="DIR", help="output directory")
        sp.add_argument("--seed", type=int, metavar="N", help="seed override (training seed for train, dataset seed otherwise)")
        if name == "selfcheck":
            sp.add_argument("--quick", action="store_true", help="fewer seeds per suite")
            sp.add_argument("--suite", action="append", choices=list(selfcheck.SUITES), help="run only this suite (repeatable)")
    return p


def _default_out(cmd: str, cfg) -> str:
    return cfg["data_dir"] if cmd == "gen" else f"runs/{cmd}"


def run(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        overrides = list(args.overrides)
        if args.seed is not None:
            overrides.append(f"{SEED_KEY.get(args.command, 'seed')}={args.seed}")
        cfg = config.load(args.config, overrides)
        out = args.out or _default_out(args.command, cfg)
        if args.command == "selfcheck":
            report = selfcheck.run(args.suite, quick=args.quick)
            print(report.format())
            if args.out:
                d = pipeline._outdir(out)
                pipeline.write_lock(cfg, d)
                (d / "selfcheck.txt").write_text(report.format() + "\n")
            return EXIT_OK if report.ok else EXIT_RUNTIME
        if args.command == "gen":
            result = pipeline.cmd_gen(cfg, out)
        elif args.command == "train":
            result = pipeline.cmd_train(cfg, out, log=pipeline.echo)
        elif args.command == "eval":
            result = pipeline.cmd_eval(cfg, out)
        elif args.command == "bench":
            result = pipeline.cmd_bench(cfg, out, warn=lambda m: pipeline.echo("warning: " + m))
        elif args.command == "ablate":
            result = pipeline.cmd_ablate(cfg, out, log=pipeline.echo)
        else:
            result = pipeline.cmd_attnmap(cfg, out)
        print(json.dumps(result, sort_keys=True))
        return EXIT_OK
    except (ConfigurationError, DimensionError, FormatError, UndefinedMetricError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(run())
