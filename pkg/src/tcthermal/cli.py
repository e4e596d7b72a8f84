"""Command-line entry point: ``tcthermal <stage> [options]``."""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys

from .config import PipelineConfig, parse_value
from .errors import TcThermalError
from .pipeline import STAGES, Pipeline
from .synth import SynthSpec, generate


def _config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    overrides = {}
    if args.level:
        overrides["levels"] = args.level
    if args.threads is not None:
        overrides["threads"] = args.threads
    if args.seed is not None:
        overrides["seed"] = args.seed
    for item in args.set or []:
        key, value = _split(item)
        overrides[key] = parse_value(key, value)
    return cfg.replace(**overrides) if overrides else cfg


def _split(item):
    if "=" not in item:
        raise SystemExit(f"--set expects KEY=VALUE, got {item!r}")
    key, value = item.split("=", 1)
    return key.strip(), value.strip()


def _synth_spec(args) -> SynthSpec:
    kw = {}
    types = {f.name: f.type for f in dataclasses.fields(SynthSpec)}
    for item in args.set or []:
        key, value = _split(item)
        if key not in types:
            raise SystemExit(f"unknown synthetic parameter {key!r}")
        if types[key] == "tuple":
            kw[key] = tuple(float(v) for v in value.split(":"))
        else:
            kw[key] = {"int": int, "float": float}.get(types[key], str)(value)
    if args.seed is not None:
        kw["seed"] = args.seed
    if args.null:
        kw.update(cold_amp=0.0, warm_amp=0.0)
    return SynthSpec(**kw)


def _add_common(p, inputs=False):
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--out", required=True, help="output directory for artifacts")
    p.add_argument("--level", help='levels to process, e.g. "10 50 AVG" (default: config)')
    p.add_argument("--threads", type=int, help="worker threads within a stage")
    p.add_argument("--seed", type=int, help="root seed")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config entry")
    p.add_argument("--resume", action="store_true", help="skip stages whose manifest is current")
    if inputs:
        p.add_argument("--tracks", required=True, help="best-track CSV")
        p.add_argument("--profiles", required=True, help="profiles JSONL")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tcthermal", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)
    for stage in STAGES:
        _add_common(sub.add_parser(stage, help=f"run the {stage} stage"), inputs=stage == "partition")
    _add_common(sub.add_parser("run-all", help="run every stage in order"), inputs=True)
    sp = sub.add_parser("synth", help="write a synthetic dataset with a planted response")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--null", action="store_true", help="zero planted amplitude")
    sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one synthetic parameter")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "synth":
            paths = generate(_synth_spec(args), args.out)
            for name, path in paths.items():
                print(f"{name}: {path}")
            return 0
        cfg = _config(args)
        pipe = Pipeline(cfg, args.out, getattr(args, "tracks", None), getattr(args, "profiles", None))
        if args.command == "run-all":
            cfg.save(pipe.path("config.txt"))
            pipe.run(resume=args.resume)
        else:
            pipe.run_stage(args.command, resume=args.resume)
    except (TcThermalError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
