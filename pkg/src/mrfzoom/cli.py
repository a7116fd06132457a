"""``mrfzoom`` command line.

Subcommands map one-to-one onto the experiment runners::

    mrfzoom gen-schedule --out runs/sched
    mrfzoom eval --config my.cfg --set targets=10 --out runs/eval
    mrfzoom run exp3              # checked-in default config, no arguments needed

Exit status is 0 on success and 1 if any step failed.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import config as cfgmod
from .experiments import COMMANDS, run

log = logging.getLogger("mrfzoom")

ALIASES = {"exp1": "ccmap", "exp2": "eval", "exp3": "slice", "exp4": "noise"}


def _common(p):
    p.add_argument("--config", help="key = value file applied over the command's defaults")
    p.add_argument("--out", default=None, help="output directory (default runs/<command>)")
    p.add_argument("--workers", type=int, default=None, help="worker threads")
    p.add_argument("--seed", type=int, default=None, help="seed for targets and noise")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key (repeatable)")


def build_parser():
    ap = argparse.ArgumentParser(prog="mrfzoom", description=__doc__.split("\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        _common(sub.add_parser(name, help=f"run the {name} step"))
    p = sub.add_parser("run", help="run an experiment with its checked-in config")
    p.add_argument("experiment", help="exp1..exp4, a command name, or a bundled config name "
                                      "such as eval-full")
    _common(p)
    return ap


def resolve(args) -> cfgmod.RunConfig:
    if args.command == "run":
        name = ALIASES.get(args.experiment, args.experiment)
        try:
            cfg = cfgmod.parse(cfgmod.default_config_text(name), origin=f"configs/{name}.cfg")
        except FileNotFoundError:
            raise ValueError(f"no bundled config named {args.experiment!r}") from None
    else:
        cfg = cfgmod.default(args.command)
    if args.config:
        cfg = cfgmod.load(args.config, cfg)
    if args.set:
        cfg = cfgmod.overrides(args.set, cfg)
    if args.workers is not None:
        cfg.workers = args.workers
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args)
        if cfg.extra.get("long_running"):
            log.warning("this configuration is long running")
        out = args.out or f"runs/{cfg.command}"
        summary = run(cfg, out)
    except Exception as exc:  # noqa: BLE001 - report any failure as a diagnostic
        print(f"mrfzoom: error: {exc}", file=sys.stderr)
        if args.verbose:
            raise
        return 1
    print(json.dumps(summary, indent=2, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
