"""Command-line entry point: one subcommand per scenario.

Exit codes: 0 success, 2 configuration rejected, 3 some trajectories blew
up (statistics use the rest), 4 a deterministic check failed in ``verify``.
"""

from __future__ import annotations

import argparse
import sys

from .experiments import (
    KEYS,
    ConfigError,
    load_config_file,
    make_plan,
    resolve_settings,
    run_plan,
)

COMMANDS = {
    "simulate": "single-run",
    "sweep-eps": "eps-sweep",
    "sweep-power": "power-sweep",
    "verify": "verify-identities",
    "martingale": "martingale-check",
    "ou-control": "ou-control",
}

# flags with their own spelling; every other config key maps to --<key>
_ALIASES = {"seed": "--seed", "out": "--out", "trajectories": "--trajectories", "workers": "--workers"}


def _add_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="key = value configuration file")
    for key, conv in KEYS.items():
        flag = _ALIASES.get(key, "--" + key.replace("_", "-"))
        p.add_argument(flag, dest=key, type=conv, default=None, metavar=key.upper())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="homogspde", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, scenario in COMMANDS.items():
        _add_flags(sub.add_parser(name, help=f"run the {scenario} scenario"))
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    scenario = COMMANDS[args.command]
    flags = {k: getattr(args, k) for k in KEYS}
    try:
        file_settings = load_config_file(args.config) if args.config else {}
        settings = resolve_settings(scenario, file_settings, flags)
        rec = run_plan(make_plan(scenario, settings))
    except ConfigError as exc:
        for v in exc.violations:
            print(f"config rejected: {v}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"config rejected: {exc}", file=sys.stderr)
        return 2
    print(f"{args.command}: wrote {', '.join(sorted(rec.tables))} to {settings['out']} "
          f"in {rec.duration:.2f} s (excluded {rec.excluded})")
    for key, val in rec.summary.items():
        print(f"  {key}: {val}")
    return rec.exit_code


if __name__ == "__main__":
    sys.exit(main())
