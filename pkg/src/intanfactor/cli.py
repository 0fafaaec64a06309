"""Command-line entry point: ``run``, ``validate`` and ``synth``.

Exit codes: 0 success, 2 validation failure, 3 data error, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace

from . import __version__
from .errors import IntanError
from .study import TABLE_IDS, load_config, run_all, validate
from .synth import SynthSpec, generate_files


def _tables(text: str):
    ids = [t.strip().upper() for t in text.split(",") if t.strip()]
    bad = [t for t in ids if t not in TABLE_IDS]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown table id(s): {', '.join(bad)}")
    return ids


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="intanfactor", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"intanfactor {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="build the selected tables")
    run.add_argument("--config", required=True)
    run.add_argument("--tables", type=_tables, help="comma-separated subset, e.g. T1,T4,T5")
    run.add_argument("--out", help="output directory (overrides the config)")
    run.add_argument("--strict", action="store_true", help="fail on any rejected input row")

    val = sub.add_parser("validate", help="check inputs and windows without building tables")
    val.add_argument("--config", required=True)

    syn = sub.add_parser("synth", help="write a synthetic panel with its ground truth")
    syn.add_argument("--spec", required=True, help="JSON SynthSpec; '-' for all defaults")
    syn.add_argument("--out", required=True)
    return p


def _run(args) -> int:
    cfg = load_config(args.config)
    if args.strict:
        cfg = replace(cfg, strict=True)
    manifest = run_all(cfg, tables=args.tables, out_dir=args.out)
    code = 0
    for entry in manifest["tables"]:
        if entry["status"] == "ok":
            print(f"{entry['id']}: ok ({len(entry['artifacts'])} files)")
        else:
            print(f"{entry['id']}: {entry['error']}: {entry['message']}", file=sys.stderr)
            code = max(code, entry["exit_code"])
    return code


def _validate(args) -> int:
    report = validate(load_config(args.config))
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0


def _synth(args) -> int:
    spec = SynthSpec() if args.spec == "-" else SynthSpec.load(args.spec)
    paths = generate_files(spec, args.out)
    for name in sorted(paths):
        print(paths[name])
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = {"run": _run, "validate": _validate, "synth": _synth}[args.command]
    try:
        return handler(args)
    except IntanError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
