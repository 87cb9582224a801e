"""Command-line entry point.

Every subcommand reads and writes files only, so stages can be run one at a
time or chained with ``pipeline``. Exit codes: 0 success, 2 configuration
error, 3 data error, 4 numeric fault.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .errors import ConfigError, ShiVAEError

log = logging.getLogger("shivae")


def _config(path) -> dict:
    from .pipeline import read_config

    return read_config(path) if path else {}


def cmd_generate(args) -> None:
    from .pipeline import stage_generate

    doc = _config(args.config)
    doc = doc.get("hmm", doc)
    if args.seed is not None:
        doc["seed"] = args.seed
    ds = stage_generate(doc, args.out)
    print(f"wrote {ds.N} sequences x {ds.D} attributes to {args.out}")


def cmd_mask(args) -> None:
    from .pipeline import stage_mask
    from .synthgen import BurstSpec

    doc = _config(args.config)
    doc = doc.get("mask", doc)
    spec = BurstSpec(min_len=args.min if args.min is not None else int(doc.get("min_len", 3)),
                     max_len=args.max if args.max is not None else int(doc.get("max_len", 10)),
                     target_rate=args.rate if args.rate is not None else float(doc.get("rate", 0.3)),
                     num_masks=args.num if args.num is not None else int(doc.get("num_masks", 10)),
                     seed=args.seed if args.seed is not None else int(doc.get("seed", 0)),
                     mode=args.mode or doc.get("mode", "per_attribute"))
    paths = stage_mask(args.data, spec, args.out, args.schema)
    print(f"wrote {len(paths)} masks to {args.out}")


def _progress(row):
    log.info("epoch %d  beta %.2f  elbo %.4f%s", row["epoch"], row["beta"], row["total"],
             f"  val {row['val_total']:.4f}" if "val_total" in row else "")


def cmd_train(args) -> None:
    from .pipeline import load_split, stage_train
    from .training import TrainConfig

    if args.schema and not Path(args.schema).is_file():
        raise ConfigError(f"schema file not found: {args.schema}")
    doc = _config(args.config)
    doc = doc.get("train", doc)
    if args.seed is not None:
        doc["seed"] = args.seed
    cfg = TrainConfig.from_dict(doc)
    split = load_split(args.split) if args.split else None
    cp = stage_train(args.data, args.mask, cfg, args.out, args.schema, split=split, progress=_progress)
    print(f"trained {cp.epoch} epochs; checkpoint in {Path(args.out) / 'final.ckpt'}")


def cmd_impute(args) -> None:
    from .pipeline import load_split, stage_impute

    doc = _config(args.config)
    doc = doc.get("impute", doc)
    samples = args.samples if args.samples is not None else int(doc.get("samples", 10))
    split_ids = load_split(args.split_file) if args.split_file else None
    path = stage_impute(args.data, args.mask, args.out, method=args.method, ckpt=args.ckpt, samples=samples,
                        seed=args.seed or 0, split=args.split, z_mode=args.z_mode or doc.get("z_mode", "sample"),
                        best=args.best, schema_path=args.schema, split_ids=split_ids)
    print(f"wrote {path}")


def cmd_evaluate(args) -> None:
    from .pipeline import stage_evaluate

    rep = stage_evaluate(args.truth or args.data, args.imputed, args.mask, args.out, args.schema)
    s = rep.summary()
    fmt = lambda d: "n/a" if d["mean"] is None else f"{d['mean']:.4f} +/- {d['std']:.4f}"  # noqa: E731
    print(f"replicates {s['n_replicates']}  error {fmt(s['error'])}  cross-corr {fmt(s['cross_corr'])}")


def cmd_report(args) -> None:
    from .report import render

    for p in render(args.data, args.out):
        print(f"wrote {p}")


def cmd_pipeline(args) -> None:
    from .pipeline import run_pipeline
    from .report import render

    doc = _config(args.config)
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.data:
        doc.setdefault("data", {})["dir"] = args.data
    if args.samples is not None:
        doc.setdefault("impute", {})["samples"] = args.samples
    base = Path(args.config).parent if args.config else None
    man = run_pipeline(doc, args.out, preset=args.preset, base_dir=base, progress=_progress)
    render(Path(args.out) / "report", Path(args.out) / "figures")
    for m, r in man["results"].items():
        print(f"{m:8s} error {r['error']['mean']:.4f}  cross-corr {r['cross_corr']['mean']:.4f}  "
              f"cross-corr (continuous) {r['cross_corr_continuous']['mean']:.4f}")
    print(f"manifest: {Path(args.out) / 'manifest.json'}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="shivae", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(func=fn)
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--config", help="YAML config file")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
        return sp

    sp = add("generate", cmd_generate, "sample the synthetic HMM dataset")

    sp = add("mask", cmd_mask, "draw a suite of burst masks")
    sp.add_argument("--data", required=True)
    sp.add_argument("--schema")
    sp.add_argument("--rate", type=float)
    sp.add_argument("--min", type=int)
    sp.add_argument("--max", type=int)
    sp.add_argument("--num", type=int)
    sp.add_argument("--mode", choices=["per_attribute", "global"])

    sp = add("train", cmd_train, "fit a model on one mask replicate")
    sp.add_argument("--data", required=True)
    sp.add_argument("--schema")
    sp.add_argument("--mask", help="overlay CSV; omitted means train on native missingness only")
    sp.add_argument("--split", help="JSON file with train/val/test id lists")

    sp = add("impute", cmd_impute, "fill hidden cells with a model or a baseline")
    sp.add_argument("--data", required=True)
    sp.add_argument("--schema")
    sp.add_argument("--mask")
    sp.add_argument("--ckpt", help="checkpoint file or training output directory")
    sp.add_argument("--samples", type=int)
    sp.add_argument("--method", choices=["shivae", "mean", "locf"], default="shivae")
    sp.add_argument("--split", choices=["all", "train", "val", "test"], default="all")
    sp.add_argument("--split-file", help="JSON split overriding the one stored in the checkpoint")
    sp.add_argument("--z-mode", choices=["sample", "mean"])
    sp.add_argument("--best", action="store_true", help="use the best-validation weights")

    sp = add("evaluate", cmd_evaluate, "score imputations against the ground truth")
    sp.add_argument("--truth", help="ground-truth data directory")
    sp.add_argument("--data", help="alias of --truth")
    sp.add_argument("--schema")
    sp.add_argument("--imputed", required=True, help="imputed.csv directory or a directory of replicates")
    sp.add_argument("--mask", required=True, help="mask CSV or directory of mask CSVs")

    sp = add("report", cmd_report, "render comparison tables and charts")
    sp.add_argument("--data", required=True, help="directory holding <method>/report.json")

    sp = add("pipeline", cmd_pipeline, "run every stage end to end")
    sp.add_argument("--preset", help="synthetic, synthetic-desk, physionet or human-monitoring")
    sp.add_argument("--data", help="input directory for physionet/csv sources")
    sp.add_argument("--samples", type=int)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "evaluate" and not (args.truth or args.data):
        parser.error("evaluate needs --truth")
    try:
        args.func(args)
    except ShiVAEError as exc:
        print(f"error: {exc}", file=sys.stderr)
        diag = getattr(exc, "diagnostics", None)
        if diag:
            print(json.dumps(diag, default=str), file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
