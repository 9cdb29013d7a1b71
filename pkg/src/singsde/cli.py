"""Command line: ``singsde validate|run|list-scenarios|describe``.

Exit codes: 0 success, 1 assertion failure, 2 invalid config or usage.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import yaml

from .scenarios import SCENARIOS, ConfigError, bundled_config_path, load_config, run_config, validate_config

EXIT_OK, EXIT_FAILED, EXIT_INVALID = 0, 1, 2


def _validate(args) -> int:
    try:
        cfg = validate_config(load_config(args.config))
    except ConfigError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_INVALID
    print(f"ok: scenario {cfg['scenario']} with {len(cfg['assertions'])} assertion(s)")
    return EXIT_OK


def _run(args) -> int:
    try:
        cfg = load_config(args.config)
        res = run_config(cfg, out_dir=args.out, workers=args.workers, seed=args.seed, dat=args.dat)
    except ConfigError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_INVALID
    for a in res.assertions:
        status = "PASS" if a["passed"] else "FAIL"
        print(f"{status} {a['id']}: {a['metric']} = {a['value']}")
    if not res.passed:
        print("failed assertions: " + ", ".join(res.failed_ids), file=sys.stderr)
        return EXIT_FAILED
    return EXIT_OK


def _list(args) -> int:
    width = max(len(n) for n in SCENARIOS)
    for name in sorted(SCENARIOS):
        print(f"{name:<{width}}  {SCENARIOS[name].description}")
    return EXIT_OK


def _describe(args) -> int:
    sc = SCENARIOS.get(args.scenario)
    if sc is None:
        print(f"unknown scenario {args.scenario!r}", file=sys.stderr)
        return EXIT_INVALID
    print(f"{sc.name}: {sc.description}")
    print(f"anchor: {sc.anchor}")
    print("metrics:")
    for k, v in sc.metrics.items():
        print(f"  {k}: {v}")
    print("parameter defaults:")
    print(yaml.safe_dump(sc.params_schema["defaults"], sort_keys=True, default_flow_style=None).rstrip())
    if args.schema:
        print("parameter schema:")
        print(json.dumps(sc.params_schema["schema"], indent=2, sort_keys=True))
    path = bundled_config_path(sc.name)
    if path.exists():
        print(f"bundled config: {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="singsde", description="Monte Carlo experiments for singular SDEs.")
    sub = ap.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="check a config without running it")
    v.add_argument("config", help="YAML file or bundled scenario name")
    v.set_defaults(func=_validate)

    r = sub.add_parser("run", help="run a config and write reports")
    r.add_argument("config", help="YAML file or bundled scenario name")
    r.add_argument("--out", type=Path, help="output directory (overrides the config)")
    r.add_argument("--workers", type=int, help="worker threads (env SINGSDE_WORKERS)")
    r.add_argument("--seed", type=int, help="master seed (env SINGSDE_SEED)")
    r.add_argument("--dat", action="store_true", help="also write gnuplot .dat tables")
    r.set_defaults(func=_run)

    ls = sub.add_parser("list-scenarios", help="list registered scenarios")
    ls.set_defaults(func=_list)

    d = sub.add_parser("describe", help="show parameters and metrics of a scenario")
    d.add_argument("scenario")
    d.add_argument("--schema", action="store_true", help="print the parameter JSON schema")
    d.set_defaults(func=_describe)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
