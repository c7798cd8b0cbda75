"""Command-line entry point: ``leads-lab {train,oracle-check,report}``."""
from __future__ import annotations

import argparse
import sys

from .checks import SUITES, run_suite
from .nn import CheckpointError
from .runner import ConfigError, RunDirError, build_config, report, train

EXIT_CONFIG = 2
EXIT_ABORTED = 3


def _split_hp(extra: list[str]) -> dict[str, str]:
    """Collect ``--hp.name value`` / ``--hp.name=value`` pairs."""
    out: dict[str, str] = {}
    i = 0
    while i < len(extra):
        arg = extra[i]
        if not arg.startswith("--hp."):
            raise ConfigError(f"unrecognized argument {arg!r}")
        key = arg[5:]
        if "=" in key:
            key, value = key.split("=", 1)
        else:
            if i + 1 >= len(extra):
                raise ConfigError(f"{arg} needs a value")
            i += 1
            value = extra[i]
        out[key] = value
        i += 1
    return out


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="leads-lab", description="Skill discovery with successor state measures.")
    sub = p.add_subparsers(dest="command", required=True)
    t = sub.add_parser("train", help="train skills and populate a run directory",
                       epilog="Any hyperparameter can be set with --hp.<name> VALUE, e.g. --hp.n_skill 4.")
    t.add_argument("--env", help="easy, u, hard, arm, or a maze .json file")
    t.add_argument("--epochs", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--objective", help="leads (default) or diayn-ablation")
    t.add_argument("--out", help="run directory (default: $LEADS_LAB_OUT/<env>_<objective>_seed<seed>)")
    t.add_argument("--config", help="INI file with [run] and [hyperparameters] sections")
    t.add_argument("--quiet", action="store_true", help="no per-epoch progress lines")
    o = sub.add_parser("oracle-check", help="run an exact tabular check suite")
    o.add_argument("suite", help=", ".join(SUITES))
    r = sub.add_parser("report", help="summarize a run and regenerate its heatmaps")
    r.add_argument("run_dir")
    return p


def cmd_train(args, extra: list[str]) -> int:
    try:
        text = None
        if args.config:
            try:
                with open(args.config) as fh:
                    text = fh.read()
            except OSError as exc:
                raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        cfg = build_config(text, {"env": args.env, "epochs": args.epochs, "seed": args.seed,
                                  "objective": args.objective, "out": args.out}, _split_hp(extra))
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    result = train(cfg, log=None if args.quiet else print)
    if result.error:
        print(f"error: training aborted at {result.error}; outputs of {len(result.reports)} finished "
              f"epoch(s) kept in {result.run_dir}", file=sys.stderr)
        return EXIT_ABORTED
    last = result.reports[-1]
    print(f"run directory: {result.run_dir}")
    print(f"final coverage: {last.fraction:.6f} ({last.cells} cells)")
    return 0


def cmd_oracle_check(args) -> int:
    try:
        checks = run_suite(args.suite)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for c in checks:
        print(c.line())
    n_fail = sum(not c.passed for c in checks)
    print(f"{args.suite}: {len(checks) - n_fail}/{len(checks)} checks passed")
    return 0 if n_fail == 0 else 1


def cmd_report(args) -> int:
    try:
        summary = report(args.run_dir)
    except (RunDirError, CheckpointError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    sys.stdout.write(summary.text())
    return 0


def main(argv: list[str] | None = None) -> int:
    args, extra = _parser().parse_known_args(argv)
    if args.command != "train" and extra:
        print(f"error: unrecognized arguments: {' '.join(extra)}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "train":
        return cmd_train(args, extra)
    if args.command == "oracle-check":
        return cmd_oracle_check(args)
    return cmd_report(args)


if __name__ == "__main__":
    sys.exit(main())
