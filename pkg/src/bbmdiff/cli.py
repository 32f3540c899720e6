"""Command-line entry point: ``bbmdiff <subcommand> [--config PATH] [options]``."""

from __future__ import annotations

import argparse
import json
import sys

from .config import KINDS, ConfigError, ExperimentConfig


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bbmdiff", description=__doc__)
    sub = p.add_subparsers(dest="kind", required=True)
    for kind in KINDS:
        s = sub.add_parser(kind)
        s.add_argument("--config", help="JSON experiment config")
        s.add_argument("--seed", type=int)
        s.add_argument("--out")
        s.add_argument("--threads", type=int)
        s.add_argument("--set", action="append", default=[], metavar="FIELD=JSON",
                       help="override one config field, e.g. --set t=4 --set 'law={\"2\":1}'")
    return p


def build_config(args) -> ExperimentConfig:
    d = {}
    if args.config:
        with open(args.config) as fh:
            d = json.load(fh)
        if d.get("kind", args.kind) != args.kind:
            raise ConfigError([("kind", f"config is for {d['kind']!r}, not {args.kind!r}")])
    d["kind"] = args.kind
    for item in args.set:
        k, sep, v = item.partition("=")
        if not sep:
            raise ConfigError([(item, "expected FIELD=VALUE")])
        try:
            d[k] = json.loads(v)
        except json.JSONDecodeError:
            d[k] = v
    for k in ("seed", "out", "threads"):
        v = getattr(args, k)
        if v is not None:
            d[k] = v
    return ExperimentConfig.from_dict(d)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = build_config(args).validate()
    except (ConfigError, TypeError) as e:
        print(f"invalid config: {e}", file=sys.stderr)
        return 2
    from .harness import run

    try:
        manifest = run(cfg)
    except Exception as e:  # noqa: BLE001 - report and exit nonzero; outputs were cleaned up
        print(f"run failed: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    for name, ok in manifest.checks.items():
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    print(f"outputs: {len(manifest.outputs)} files in {cfg.out}")
    return 0 if manifest.passed else 1


if __name__ == "__main__":
    sys.exit(main())
