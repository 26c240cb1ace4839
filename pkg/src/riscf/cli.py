"""Command-line front end.

Exit codes: 0 success, 1 configuration/validation/usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import warnings
from pathlib import Path
from typing import List, Optional

import numpy as np

from .channel import CsiErrorSpec, dump_channels, generate_channels
from .evaluate import (SCHEMES, aggregate_csv, cdf_csv, monte_carlo, parse_grid,
                       parse_scheme, provenance, run_drop)
from .scenario import (ConfigError, SystemConfig, check_config, generate_topology,
                       load_config, validate_config, with_overrides)

OUTPUT_ENV = "RISCF_OUTPUT_DIR"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors; this tool reserves 2 for runtime failures
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _overrides(items) -> dict:
    out = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError([f"override must be key=value (got {item!r})"])
        out[key.strip()] = value.strip()
    return out


def _load(args) -> SystemConfig:
    overrides = _overrides(args.override)
    if args.seed is not None:
        overrides["rng_seed"] = str(args.seed)
    if args.config:
        return load_config(args.config, overrides)
    return with_overrides(SystemConfig(), overrides)


def _csi(args) -> CsiErrorSpec:
    return CsiErrorSpec(args.delta_r, args.delta_d, args.los_only)


def _schemes(text: str) -> List[str]:
    names = [s.strip() for s in text.split(",") if s.strip()]
    for s in names:
        try:
            parse_scheme(s)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    return names


def _out_dir(args) -> Path:
    out = Path(args.out or os.environ.get(OUTPUT_ENV) or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _csi_lines(csi: CsiErrorSpec) -> List[str]:
    return [f"csi delta_r = {csi.delta_r!r}, delta_d = {csi.delta_d!r}, los_only = {csi.los_only}"]


def cmd_validate(args) -> int:
    config = _load(args)
    errors = validate_config(config)
    for e in errors:
        print(e)
    if errors:
        return 1
    print("ok")
    return 0


def cmd_run(args) -> int:
    config = check_config(_load(args))
    csi = _csi(args)
    result = run_drop(config, config.rng_seed, args.drop, [args.scheme], csi)[0]
    doc = {
        "provenance": provenance(),
        "config": config.as_dict(),
        "csi": {"delta_r": csi.delta_r, "delta_d": csi.delta_d, "los_only": csi.los_only},
        "result": result.to_dict(),
    }
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    path = _out_dir(args) / args.name
    path.write_text(text)
    print(path)
    return 0


def cmd_sweep(args) -> int:
    config = check_config(_load(args))
    csi = _csi(args)
    try:
        grid = parse_grid(args.grid)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    result = monte_carlo(config, _schemes(args.schemes), args.drops, args.axis, grid, csi,
                         config.rng_seed, args.jobs)
    path = _out_dir(args) / args.name
    path.write_text(aggregate_csv(result, config, [f"axis = {args.axis}"] + _csi_lines(csi)))
    print(path)
    return 0


def cmd_cdf(args) -> int:
    config = check_config(_load(args))
    csi = _csi(args)
    result = monte_carlo(config, _schemes(args.schemes), args.drops, csi=csi,
                         seed=config.rng_seed, jobs=args.jobs)
    path = _out_dir(args) / args.name
    path.write_text(cdf_csv(result, config, _csi_lines(csi)))
    print(path)
    return 0


def cmd_dump_channels(args) -> int:
    config = check_config(_load(args))
    chan_ss = np.random.SeedSequence([config.rng_seed, args.drop]).spawn(3)[0]
    rng = np.random.default_rng(chan_ss)
    topology = generate_topology(config, rng)
    channels = generate_channels(topology, config, rng)
    path = _out_dir(args) / args.name
    dump_channels(channels, path, meta={"provenance": provenance(), "seed": config.rng_seed,
                                        "drop": args.drop, "config": config.as_dict()})
    print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="riscf", description="RIS-assisted cell-free MIMO two-stage design")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, out_name):
        p.add_argument("--config", help="INI-style config file (defaults: built-in setup)")
        p.add_argument("--override", action="append", metavar="KEY=VALUE",
                       help="override a config key (repeatable)")
        p.add_argument("--seed", type=int, help="root seed (overrides rng_seed)")
        p.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV} or .)")
        p.add_argument("--name", default=out_name, help="output file name")

    def csi(p):
        p.add_argument("--delta-r", type=float, default=0.0, help="cascaded-link CSI error ratio")
        p.add_argument("--delta-d", type=float, default=0.0, help="direct-link CSI error ratio")
        p.add_argument("--los-only", action="store_true",
                       help="design with LoS parts of the cascaded links only")

    def mc(p):
        p.add_argument("--drops", type=int, default=200)
        p.add_argument("--schemes", default=",".join(SCHEMES))
        p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)

    p = sub.add_parser("run", help="one drop of one scheme, JSON result")
    common(p, "run.json")
    csi(p)
    p.add_argument("--scheme", default="proposed")
    p.add_argument("--drop", type=int, default=0)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="mean WSR per scheme over a parameter grid, CSV")
    common(p, "sweep.csv")
    csi(p)
    mc(p)
    p.add_argument("--axis", required=True,
                   help="power_dbm, ris_elements, ap_antennas_total, ris_diameter, "
                        "csi_delta_r, csi_delta_d, weight_<k> or any config key")
    p.add_argument("--grid", required=True, help="start:step:stop (inclusive) or v1,v2,...")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("cdf", help="empirical WSR CDF per scheme, CSV")
    common(p, "cdf.csv")
    csi(p)
    mc(p)
    p.set_defaults(func=cmd_cdf)

    p = sub.add_parser("validate", help="check config invariants")
    common(p, "")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("dump-channels", help="write one drop's true channels as JSON")
    common(p, "channels.json")
    p.add_argument("--drop", type=int, default=0)
    p.set_defaults(func=cmd_dump_channels)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        for v in exc.violations:
            print(f"config error: {v}", file=sys.stderr)
        return 1
    except UsageError as exc:
        print(f"riscf: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime error
        print(f"riscf: runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
