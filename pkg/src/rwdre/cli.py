"""Command-line entry point: ``rwdre run | list | validate``.

Exit codes: 0 success, 2 a verdict experiment violated its bound, 1 any
error (invalid configuration included).
"""

from __future__ import annotations

import argparse
import json
import sys

from .config import ConfigError, load_config
from .experiments import EXIT_ERROR, registry_list, run

__all__ = ["main"]


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rwdre", description="Random walks in dynamic random environments")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment from a config file")
    r.add_argument("--config", required=True, help="experiment config file")
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--seed", type=int, help="override the config seed")
    r.add_argument("--replicas", type=int, help="override the replica count")
    r.add_argument("--dump-trajectories", action="store_true", help="write trajectories.csv")
    r.add_argument("--export-generator", action="store_true",
                   help="write generator.mtx (tiny tori only)")
    sub.add_parser("list", help="list registered experiments")
    v = sub.add_parser("validate", help="parse and validate a config file")
    v.add_argument("--config", required=True)
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "list":
        for e in registry_list():
            print(f"{e['name']:<18} {e['description']}  [{e['claim']}]")
        return 0
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"{args.config}: invalid configuration", file=sys.stderr)
        for issue in exc.issues:
            print(f"  {issue}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(f"cannot read {args.config}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    if args.command == "validate":
        print(json.dumps(cfg.resolved(), indent=2, sort_keys=True))
        return 0
    try:
        cfg = cfg.with_overrides(seed=args.seed, replicas=args.replicas)
        manifest, code = run(cfg, args.out, dump_trajectories=args.dump_trajectories,
                             export_generator=args.export_generator)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_ERROR
    except Exception as exc:  # noqa: BLE001 - report any failure as exit 1
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    print(f"{cfg.name}: wrote {', '.join(manifest['artifacts'])} and manifest.json to {args.out}")
    if code:
        print(f"{cfg.name}: verdict violated", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
