"""Command-line entry point: ``cxrforge {qc,generate,quant,selftest,toy,bench}``.

Exit codes: 0 success, 1 partial failure, 2 usage or configuration error.
Logs go to stderr as JSON lines; a one-line progress summary goes to stdout.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .config import PRESETS, ForgeConfig, apply_preset, load_config, parse_angles
from .errors import ConfigurationError, ForgeError
from .pipeline import CURATION_FILE, EXIT_OK, EXIT_PARTIAL, EXIT_USAGE, run_generate, run_qc, run_quant


class JsonLogFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        out = {"level": record.levelname.lower(), "logger": record.name, "msg": record.getMessage()}
        if record.exc_info:
            out["exc"] = self.formatException(record.exc_info)
        return json.dumps(out, sort_keys=True)


def _setup_logging(verbose: bool) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(JsonLogFormatter())
    root = logging.getLogger()
    root.handlers[:] = [handler]
    root.setLevel(logging.INFO if verbose else logging.WARNING)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int, help="global seed")
    p.add_argument("--workers", type=int, help="worker processes (default: $FORGE_WORKERS or 1)")
    p.add_argument("--angles", help="comma-separated view angles in degrees")
    p.add_argument("--out", help="output directory")
    p.add_argument("--ct-dir", help="directory of CT volumes")
    p.add_argument("--label-dir", help="directory of label volumes")
    p.add_argument("--class-map", help="JSON file mapping class names to label values")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cxrforge", description="Synthetic chest radiograph forge.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("qc", help="curate CT/label pairs")
    _common(p)

    p = sub.add_parser("generate", help="render the randomized dataset")
    _common(p)
    p.add_argument("--variations", type=int, help="variations per volume")
    p.add_argument("--preset", choices=sorted(PRESETS), help="ablation preset")
    p.add_argument("--curation", help="curation manifest (default: <out>/curation.jsonl, run qc if missing)")
    p.add_argument("--dump-plans", action="store_true", help="also write plans.jsonl")

    p = sub.add_parser("quant", help="CTR and spine-curvature measurements from masks")
    _common(p)
    p.add_argument("mask_dir")

    p = sub.add_parser("selftest", help="run the built-in oracle suites")
    p.add_argument("--suite", action="append", choices=["car", "projector", "plans"])

    p = sub.add_parser("toy", help="write a synthetic toy dataset")
    p.add_argument("out")
    p.add_argument("-n", type=int, default=3, help="number of volumes")
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--defect", action="append", default=[], metavar="INDEX:KIND",
                   help="plant a QC defect (three_in_slice or overlap) in volume INDEX")

    p = sub.add_parser("bench", help="rendering throughput benchmark")
    p.add_argument("--speedup", type=int, default=4, metavar="N")
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--detector", type=int, default=512)
    return ap


def config_from_args(args) -> ForgeConfig:
    cfg = load_config(args.config) if args.config else ForgeConfig()
    over = {}
    if args.seed is not None:
        over["global_seed"] = args.seed
    if args.workers is not None:
        over["workers"] = args.workers
    if args.angles:
        over["angles"] = parse_angles(args.angles)
    if args.out:
        over["output_dir"] = args.out
    if args.ct_dir:
        over["ct_dir"] = args.ct_dir
    if args.label_dir:
        over["label_dir"] = args.label_dir
    if args.class_map:
        over["class_map"] = args.class_map
    if getattr(args, "variations", None) is not None:
        over["variations_per_volume"] = args.variations
    if getattr(args, "dump_plans", False):
        over["dump_plans"] = True
    cfg = replace(cfg, **over)
    if getattr(args, "preset", None):
        cfg = apply_preset(cfg, args.preset)
    return cfg


def _cmd_selftest(args) -> int:
    from .selftest import format_report, run_selftest

    results = run_selftest(args.suite)
    print(format_report(results))
    return EXIT_OK if all(r.ok for r in results) else EXIT_PARTIAL


def _cmd_toy(args) -> int:
    from .phantom import write_toy_dataset

    defects = {}
    for spec in args.defect:
        idx, _, kind = spec.partition(":")
        if kind not in ("three_in_slice", "overlap"):
            raise ConfigurationError(f"bad defect {spec!r}")
        defects[int(idx)] = kind
    ids = write_toy_dataset(args.out, args.n, (args.size,) * 3, seed=args.seed, defects=defects)
    print(f"wrote {len(ids)} volumes to {args.out}")
    return EXIT_OK


def _cmd_bench(args) -> int:
    from .bench import measure_speedup

    res = measure_speedup(args.speedup, args.size, args.detector)
    print(json.dumps(res))
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _setup_logging(getattr(args, "verbose", False))
    try:
        if args.command == "selftest":
            return _cmd_selftest(args)
        if args.command == "toy":
            return _cmd_toy(args)
        if args.command == "bench":
            return _cmd_bench(args)
        cfg = config_from_args(args)
        if args.command == "qc":
            records, code = run_qc(cfg)
            kept = sum(r["accepted"] for r in records)
            print(f"qc: {len(records)} volumes, {kept} accepted -> {Path(cfg.output_dir) / CURATION_FILE}")
            return code
        if args.command == "generate":
            curation = args.curation or cfg.curation_manifest
            code = EXIT_OK
            if curation is None and not (Path(cfg.output_dir) / CURATION_FILE).exists():
                _, code = run_qc(cfg)
            records, gen_code = run_generate(cfg, curation)
            print(f"generate: {len(records)} samples -> {cfg.output_dir}")
            return max(code, gen_code)
        if args.command == "quant":
            records, code = run_quant(cfg, args.mask_dir)
            print(f"quant: {len(records)} records -> {Path(cfg.output_dir) / 'quant.jsonl'}")
            return code
    except ConfigurationError as exc:
        print(f"cxrforge: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ForgeError as exc:
        logging.getLogger("cxrforge").error("%s", exc)
        return EXIT_PARTIAL
    parser.error(f"unknown command {args.command}")
    return EXIT_USAGE


if __name__ == "__main__":
    raise SystemExit(main())
