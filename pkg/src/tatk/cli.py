"""Command line entry point: ``tatk run|generate|train|attribute|evaluate``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline as pl


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="experiment config (JSON)")
    p.add_argument("--out", type=Path, help="output directory (defaults to config output_dir)")
    p.add_argument("--seed", type=int, help="override every seed in the config")
    p.add_argument("--force", action="store_true", help="overwrite an existing output directory")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tatk", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in [("run", "all stages"), ("generate", "write dataset artifacts"),
                        ("train", "fit or copy the model"),
                        ("attribute", "compute attributions"),
                        ("evaluate", "write metrics.csv and report.json")]:
        p = sub.add_parser(name, help=help_)
        _common(p)
        if name == "attribute":
            p.add_argument("--method", help="run only this method (replaces its config entry)")
            p.add_argument("--inner", help="inner method for wrapper methods")
            p.add_argument("--steps", type=int, help="integration steps")
            p.add_argument("--option", action="append", default=[], metavar="KEY=VALUE",
                           help="extra method option; VALUE is parsed as JSON when possible")
    return parser


def _resolve(args) -> tuple[dict, Path]:
    if args.config is not None:
        cfg = pl.load_config(args.config)
    elif args.out is not None and (args.out / "config.json").exists():
        cfg = pl.load_config(args.out / "config.json")
    else:
        raise pl.ConfigError("pass --config, or --out pointing at a directory with config.json")
    if args.seed is not None:
        cfg = pl.override_seed(cfg, args.seed)
    cfg = pl.validate_config(cfg)
    out = args.out or (Path(cfg["output_dir"]) if cfg.get("output_dir") else None)
    if out is None:
        raise pl.ConfigError("no output directory: pass --out or set output_dir in the config")
    return cfg, out


def _method_entry(args, cfg: dict) -> dict:
    options = {}
    if args.steps is not None:
        options["steps"] = args.steps
    for item in args.option:
        key, _, raw = item.partition("=")
        try:
            options[key] = json.loads(raw)
        except json.JSONDecodeError:
            options[key] = raw
    entry = {"name": args.method, "options": options, "seed": args.seed if args.seed is not None else 0}
    if args.inner:
        entry["inner"] = args.inner
    probe = dict(cfg, methods=[entry])
    pl.validate_config(probe)
    return entry


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg, out = _resolve(args)
        if args.command == "run":
            pl.run(cfg, out, force=args.force)
        elif args.command == "generate":
            pl.prepare_output(out, args.force)
            pl.run_stage("generate", cfg, out)
        elif args.command == "attribute" and args.method:
            entry = _method_entry(args, cfg)
            label = pl.method_label(entry)
            cfg["methods"] = [m for m in cfg["methods"] if pl.method_label(m) != label] + [entry]
            (out / "config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")
            pl.run_stage("attribute", cfg, out, only=[label])
        else:
            if not out.exists():
                raise FileNotFoundError(f"output directory {out} does not exist; run generate first")
            pl.run_stage(args.command, cfg, out)
    except (pl.ConfigError, FileExistsError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except pl.StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
