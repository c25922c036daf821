"""Command line entry point.

    rsloc run --config exp.cfg [--seed N] [--out DIR] [--replicas N] [--quiet]
    rsloc verify-potential | run-path | ensemble | concentration | freedman  (same flags)
    rsloc report --out DIR

Every subcommand except ``report`` writes a JSON summary of its checks to
the output directory; ``report`` merges them into the checklist.
The exit status is 1 iff a hard check fails (2 for usage or input errors).
"""

import argparse
import os
import sys

from . import runner
from .config import ConfigError, ExperimentConfig, load


def _config(args):
    cfg = load(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg.run.seed = args.seed
    if args.replicas is not None:
        cfg.run.replicas = args.replicas
    if args.out is not None:
        cfg.output = args.out
    return cfg.validate()


def _print_checks(checks, quiet):
    if quiet:
        return
    width = max(len(n) for n in checks)
    for name, c in checks.items():
        tag = "" if c["hard"] else "  (report only)"
        print(f"{name:<{width}}  {c['status']}{tag}")


def _finish(checks, cfg, stage, filename, quiet):
    os.makedirs(cfg.output, exist_ok=True)
    runner.write_summary(os.path.join(cfg.output, filename), checks, cfg, stage)
    _print_checks(checks, quiet)
    return 1 if runner.failed_checks(checks) else 0


def cmd_run(args):
    cfg = _config(args)
    log = (lambda m: None) if args.quiet else (lambda m: print(f"[rsloc] {m}", file=sys.stderr))
    checks, code = runner.run(cfg, cfg.output, log)
    _print_checks(checks, args.quiet)
    return code


def cmd_verify(args):
    cfg = _config(args)
    ctx = runner.prepare(cfg)
    return _finish(runner.stage_verify(ctx), cfg, "verify-potential", "verify.json", args.quiet)


def _paths(args, replicas, stage, filename):
    cfg = _config(args)
    os.makedirs(cfg.output, exist_ok=True)
    ctx = runner.prepare(cfg)
    runner.simulate_paths(ctx, replicas)
    checks = runner.stage_paths(ctx)
    runner.write_paths(ctx, cfg.output)
    return _finish(checks, cfg, stage, filename, args.quiet)


def cmd_run_path(args):
    return _paths(args, [0], "run-path", "path.json")


def cmd_ensemble(args):
    return _paths(args, None, "ensemble", "ensemble.json")


def cmd_concentration(args):
    cfg = _config(args)
    os.makedirs(cfg.output, exist_ok=True)
    ctx = runner.prepare(cfg)
    checks = runner.stage_concentration(ctx)
    runner.write_curves(ctx, cfg.output, checks)
    return _finish(checks, cfg, "concentration", "concentration.json", args.quiet)


def cmd_freedman(args):
    cfg = _config(args)
    ctx = runner.prepare(cfg)
    checks = runner.stage_freedman(ctx)
    if not args.quiet:
        print(f"{'a':>5} {'b':>5} {'empirical':>10} {'bound':>10}")
        for r in checks["freedman_brownian"]["detail"]["rows"]:
            print(f"{r['a']:5.2f} {r['b']:5.2f} {r['fraction']:10.5f} {r['bound']:10.5f}")
    return _finish(checks, cfg, "freedman", "freedman.json", args.quiet)


def cmd_report(args):
    out = args.out or ExperimentConfig().output
    try:
        doc = runner.report(out)
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    if not args.quiet:
        width = max(len(n) for n in doc["checklist"])
        for name, c in doc["checklist"].items():
            print(f"{name:<{width}}  {c['status']:<22} {c.get('source') or '-'}")
        if doc["missing"]:
            print("missing: " + ", ".join(doc["missing"]))
    return 1 if doc["failed"] else 0


COMMANDS = {
    "run": (cmd_run, "full pipeline: simulate, run all checks, write artifacts"),
    "verify-potential": (cmd_verify, "check convexity and curvature along E"),
    "run-path": (cmd_run_path, "simulate a single localization path"),
    "ensemble": (cmd_ensemble, "simulate the replica ensemble and run path checks"),
    "concentration": (cmd_concentration, "estimate the concentration function and check the bounds"),
    "freedman": (cmd_freedman, "Freedman tail table on Brownian paths"),
    "report": (cmd_report, "merge stage summaries into the checklist"),
}


def build_parser():
    parser = argparse.ArgumentParser(prog="rsloc", description="Restricted stochastic localization experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="experiment config file (key = value lines)")
        p.add_argument("--seed", type=int, help="override run.seed")
        p.add_argument("--out", help="output directory (overrides output)")
        p.add_argument("--replicas", type=int, help="override run.replicas")
        p.add_argument("--quiet", action="store_true", help="suppress progress and tables")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command][0](args)
    except (ConfigError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
