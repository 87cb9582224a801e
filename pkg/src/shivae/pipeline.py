"""File-based pipeline stages. Every stage reads and writes plain files so the
CLI subcommands can run independently with no shared state."""

from __future__ import annotations

import hashlib
import json
import logging
import time
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .datamodel import (HeterogeneousDataset, apply_overlay, load_dataset, read_overlay_csv,
                        read_dataset_csv, require_valid, save_dataset, write_dataset_csv,
                        write_overlay_csv)
from .errors import ConfigError, DataError, ShiVAEError
from .imputation import impute_baseline, impute_dataset
from .metrics import MetricReport, aggregate, attribute_metrics
from .physionet import load_physionet_format
from .presets import get_preset, human_monitoring_standin, merge, physionet_standin
from .seeding import substream_seed
from .synthgen import BurstSpec, HmmConfig, generate_mask_suite, sample_hmm_dataset
from .training import TrainConfig, export_history, load_checkpoint, save_checkpoint, split_ids, train

log = logging.getLogger(__name__)

METHODS = ("shivae", "mean", "locf")


def read_config(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if doc is None:
        return {}
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: expected a mapping")
    return doc


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_yaml(doc, path):
    Path(path).write_text(yaml.safe_dump(doc, sort_keys=False))


# ---------------------------------------------------------------- stages

def stage_generate(hmm: dict | HmmConfig, out_dir) -> HeterogeneousDataset:
    cfg = hmm if isinstance(hmm, HmmConfig) else HmmConfig.from_dict(hmm)
    ds = sample_hmm_dataset(cfg)
    save_dataset(ds, out_dir)
    _write_yaml(cfg.to_dict(), Path(out_dir) / "hmm.yaml")
    return ds


def stage_mask(data_dir, spec: BurstSpec, out_dir, schema_path=None) -> list[Path]:
    ds = load_dataset(data_dir, schema_path)
    suite = generate_mask_suite(ds, spec)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for r, overlay in enumerate(suite.masks):
        p = out_dir / f"{r}.csv"
        write_overlay_csv(ds, overlay, p)
        paths.append(p)
    _write_yaml({"target_rate": spec.target_rate, "min_len": spec.min_len, "max_len": spec.max_len,
                 "num_masks": spec.num_masks, "seed": spec.seed, "mode": spec.mode}, out_dir / "suite.yaml")
    return paths


def stage_train(data_dir, mask_path, cfg: TrainConfig, out_dir, schema_path=None, split=None, progress=None):
    ds = load_dataset(data_dir, schema_path)
    overlay = read_overlay_csv(mask_path, ds) if mask_path else None
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        cp = train(ds, overlay, cfg, split=split, progress=progress)
    except ShiVAEError as exc:
        if getattr(exc, "last_good", None) is not None:
            save_checkpoint(exc.last_good, out_dir / "last_good.ckpt")
        raise
    save_checkpoint(cp, out_dir / "final.ckpt")
    export_history(cp, out_dir / "history.json")
    return cp


def _select(ds: HeterogeneousDataset, overlay, ids):
    pos = {s.id: i for i, s in enumerate(ds.sequences)}
    missing = [i for i in ids if i not in pos]
    if missing:
        raise DataError(f"split ids not in dataset: {missing[:5]}")
    return ds.select_ids(ids), (None if overlay is None else [overlay[pos[i]] for i in ids])


def write_uncertainty_csv(ds: HeterogeneousDataset, rows: list[np.ndarray], path) -> None:
    lines = [",".join(["sequence_id", "t", *ds.names])]
    for seq, u in zip(ds.sequences, rows):
        for t in range(seq.length):
            cells = ["" if np.isnan(v) else repr(float(v)) for v in u[t]]
            lines.append(",".join([seq.id, str(t), *cells]))
    Path(path).write_text("\n".join(lines) + "\n")


def load_split(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read split file {path}: {exc}") from exc
    if not isinstance(doc, dict) or not {"train", "test"} <= set(doc):
        raise ConfigError(f"{path}: split file needs 'train' and 'test' id lists")
    return doc


def stage_impute(data_dir, mask_path, out_dir, method="shivae", ckpt=None, samples=10, seed=0,
                 split="all", z_mode="sample", best=False, schema_path=None, split_ids=None) -> Path:
    """Impute the hidden cells of ``split`` ("all", "train", "val" or "test").

    Split ids come from ``split_ids`` when given, otherwise from the checkpoint.
    Baselines use training-split statistics when a split is known.
    """
    if method not in METHODS:
        raise ConfigError(f"unknown imputation method {method!r}")
    if split not in ("all", "train", "val", "test"):
        raise ConfigError(f"unknown split {split!r}")
    ds = load_dataset(data_dir, schema_path)
    overlay = read_overlay_csv(mask_path, ds) if mask_path else None
    cp = load_checkpoint(ckpt) if ckpt else None
    if method == "shivae" and cp is None:
        raise ConfigError("Shi-VAE imputation needs a checkpoint")
    known = split_ids if split_ids is not None else (cp.split if cp is not None else {})
    if split != "all":
        if split not in known:
            raise ConfigError(f"split {split!r} is not recorded; pass a split file or a checkpoint")
        target, target_ov = _select(ds, overlay, known[split])
    else:
        target, target_ov = ds, overlay
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if method == "shivae":
        results = impute_dataset(target, target_ov, cp, samples, seed, z_mode=z_mode, best=best)
        completed = [r.sequence for r in results]
        uncertainty = [r.uncertainty(ds.schema) for r in results]
    else:
        masked = apply_overlay(ds, overlay) if overlay is not None else ds
        train_ds = masked.select_ids(known["train"]) if known.get("train") else masked
        completed = impute_baseline(method, target, target_ov, train_ds)
        uncertainty = None
    out = HeterogeneousDataset(ds.schema, completed)
    write_dataset_csv(out, out_dir / "imputed.csv")
    if uncertainty is not None:
        write_uncertainty_csv(out, uncertainty, out_dir / "uncertainty.csv")
    return out_dir / "imputed.csv"


def _replicate_pairs(imputed_dir: Path, mask: Path) -> list[tuple[str, Path, Path]]:
    if (imputed_dir / "imputed.csv").is_file():
        if mask.is_dir():
            csvs = sorted(mask.glob("*.csv"))
            if len(csvs) != 1:
                raise ConfigError(f"{imputed_dir} holds one replicate; pass a single mask file")
            mask = csvs[0]
        return [(mask.stem, imputed_dir / "imputed.csv", mask)]
    pairs = []
    for sub in sorted((p for p in imputed_dir.iterdir() if p.is_dir()), key=lambda p: (len(p.name), p.name)):
        if not (sub / "imputed.csv").is_file():
            continue
        m = mask / f"{sub.name}.csv" if mask.is_dir() else mask
        if not m.is_file():
            raise ConfigError(f"no mask {m} for imputed replicate {sub}")
        pairs.append((sub.name, sub / "imputed.csv", m))
    if not pairs:
        raise DataError(f"no imputed.csv found under {imputed_dir}")
    return pairs


def stage_evaluate(truth_dir, imputed_dir, mask, out_dir, schema_path=None) -> MetricReport:
    truth = load_dataset(truth_dir, schema_path)
    reps = []
    for _, imp_path, mask_path in _replicate_pairs(Path(imputed_dir), Path(mask)):
        overlay = read_overlay_csv(mask_path, truth)
        imputed = read_dataset_csv(imp_path, truth.schema)
        reps.append(attribute_metrics(truth, imputed.sequences, overlay))
    report = aggregate(reps, truth.schema)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(json.dumps(report.to_dict(), indent=1))
    write_table_csv(report.table_rows(), out_dir / "table.csv")
    return report


def write_table_csv(rows: list[dict], path) -> None:
    import pandas as pd

    pd.DataFrame(rows).to_csv(path, index=False, float_format="%.6g")


# ---------------------------------------------------------------- pipeline

class Manifest:
    def __init__(self, out_dir: Path, config: dict):
        self.path = out_dir / "manifest.json"
        self.out_dir = out_dir
        blob = json.dumps(config, sort_keys=True).encode()
        self.doc = {"tool_version": __version__, "config": config,
                    "config_sha256": hashlib.sha256(blob).hexdigest(),
                    "seeds": {}, "stages": [], "artifacts": [], "status": "running"}

    def stage(self, name, seconds, status="ok"):
        self.doc["stages"].append({"name": name, "status": status, "seconds": round(seconds, 3)})
        self.write()

    def artifact(self, path):
        path = Path(path)
        self.doc["artifacts"].append({"path": str(path.relative_to(self.out_dir)), "sha256": sha256_file(path)})

    def write(self):
        self.path.write_text(json.dumps(self.doc, indent=1))


def resolve_experiment(config: dict | None = None, preset: str | None = None) -> dict:
    """Overlay ``config`` on a preset (``preset`` argument, then ``config["preset"]``,
    then the desk-scale synthetic default)."""
    config = dict(config or {})
    base = get_preset(preset or config.pop("preset", None) or "synthetic-desk")
    config.pop("preset", None)
    exp = merge(base, config)
    for key in ("data", "mask", "train"):
        if not isinstance(exp.get(key), dict):
            raise ConfigError(f"experiment config needs a {key!r} mapping")
    methods = exp.setdefault("methods", list(METHODS))
    bad = set(methods) - set(METHODS)
    if bad:
        raise ConfigError(f"unknown methods {sorted(bad)}")
    return exp


def _prepare_data(exp: dict, root_seed: int, data_dir: Path, base_dir: Path | None) -> None:
    src = exp["data"].get("source", "synthetic")
    if src == "synthetic":
        hmm = dict(exp["data"].get("hmm", {}))
        hmm.setdefault("seed", substream_seed(root_seed, "datagen"))
        stage_generate(hmm, data_dir)
    elif src == "human_monitoring_standin":
        d = exp["data"]
        ds = human_monitoring_standin(d.get("num_sequences", 167), d.get("min_length", 40),
                                      d.get("max_length", 120), substream_seed(root_seed, "datagen"))
        save_dataset(ds, data_dir)
    elif src == "physionet_standin":
        d = exp["data"]
        ds = physionet_standin(d.get("num_patients", 60), d.get("native_rate", 0.3),
                               substream_seed(root_seed, "datagen"))
        save_dataset(ds, data_dir)
    elif src in ("physionet", "csv"):
        where = exp["data"].get("dir")
        if not where:
            raise ConfigError(f"data source {src!r} needs data.dir")
        where = Path(where)
        if base_dir is not None and not where.is_absolute():
            where = base_dir / where
        schema = exp["data"].get("schema")
        if schema is not None:
            schema = Path(schema) if Path(schema).is_absolute() or base_dir is None else base_dir / schema
            if not Path(schema).is_file():
                raise ConfigError(f"schema file not found: {schema}")
        if src == "physionet":
            ds = load_physionet_format(where, schema)
        else:
            if schema is None and not (where / "schema.yaml").is_file():
                raise ConfigError(f"schema file not found for {where}")
            ds = load_dataset(where, schema)
        require_valid(ds)
        save_dataset(ds, data_dir)
    else:
        raise ConfigError(f"unknown data source {src!r}")


def run_pipeline(config: dict | None, out_dir, preset: str | None = None, base_dir=None,
                 progress=None) -> dict:
    """Run generate/load, mask, train, impute and evaluate for every replicate."""
    exp = resolve_experiment(config, preset)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    root = int(exp.get("seed", 0))
    # fail on bad sections before any compute
    mask_cfg = dict(exp["mask"])
    spec = BurstSpec(min_len=int(mask_cfg.get("min_len", 3)), max_len=int(mask_cfg.get("max_len", 10)),
                     target_rate=float(mask_cfg.get("rate", 0.3)), num_masks=int(mask_cfg.get("num_masks", 10)),
                     seed=substream_seed(root, "mask"), mode=mask_cfg.get("mode", "per_attribute"))
    base_train = TrainConfig.from_dict(exp["train"])
    imp_cfg = exp.get("impute", {})
    samples = int(imp_cfg.get("samples", 10))
    z_mode = imp_cfg.get("z_mode", "sample")

    manifest = Manifest(out_dir, exp)
    manifest.doc["seeds"] = {"root": root, "mask": spec.seed, "split": substream_seed(root, "split")}
    data_dir, mask_dir = out_dir / "data", out_dir / "masks"
    reports = {}
    try:
        t0 = time.perf_counter()
        _prepare_data(exp, root, data_dir, Path(base_dir) if base_dir else None)
        manifest.artifact(data_dir / "dataset.csv")
        manifest.artifact(data_dir / "schema.yaml")
        manifest.stage("data", time.perf_counter() - t0)

        t0 = time.perf_counter()
        for p in stage_mask(data_dir, spec, mask_dir):
            manifest.artifact(p)
        manifest.stage("mask", time.perf_counter() - t0)

        ds = load_dataset(data_dir)
        split = split_ids(ds, base_train.split, root)
        if not split["test"]:
            raise ConfigError("test split is empty; adjust split fractions")
        (out_dir / "split.json").write_text(json.dumps(split, indent=1))
        manifest.artifact(out_dir / "split.json")

        for r in range(spec.num_masks):
            mask_path = mask_dir / f"{r}.csv"
            ckpt_dir = out_dir / "ckpt" / str(r)
            if "shivae" in exp["methods"]:
                t0 = time.perf_counter()
                cfg = TrainConfig.from_dict({**base_train.to_dict(), "seed": substream_seed(root, "training", r)})
                stage_train(data_dir, mask_path, cfg, ckpt_dir, split=split, progress=progress)
                manifest.artifact(ckpt_dir / "final.ckpt")
                manifest.stage(f"train[{r}]", time.perf_counter() - t0)
            t0 = time.perf_counter()
            for m in exp["methods"]:
                dest = out_dir / "imputed" / m / str(r)
                ckpt = ckpt_dir / "final.ckpt" if m == "shivae" else None
                stage_impute(data_dir, mask_path, dest, method=m, ckpt=ckpt, samples=samples,
                             seed=substream_seed(root, "imputation", r), split="test", z_mode=z_mode,
                             split_ids=split)
                manifest.artifact(dest / "imputed.csv")
            manifest.stage(f"impute[{r}]", time.perf_counter() - t0)

        t0 = time.perf_counter()
        for m in exp["methods"]:
            rep = stage_evaluate(data_dir, out_dir / "imputed" / m, mask_dir, out_dir / "report" / m)
            manifest.artifact(out_dir / "report" / m / "report.json")
            reports[m] = rep.summary()
        write_comparison(reports, out_dir / "report" / "comparison.csv")
        manifest.artifact(out_dir / "report" / "comparison.csv")
        manifest.stage("evaluate", time.perf_counter() - t0)
        manifest.doc["status"] = "complete"
        manifest.doc["results"] = {m: {k: s[k] for k in ("error", "cross_corr", "cross_corr_continuous")}
                                   for m, s in reports.items()}
    except ShiVAEError as exc:
        manifest.doc["status"] = "failed"
        manifest.doc["error"] = {"type": type(exc).__name__, "message": str(exc)}
        manifest.write()
        raise
    manifest.write()
    return manifest.doc


def write_comparison(summaries: dict, path) -> None:
    rows = []
    for m, s in summaries.items():
        rows.append({"method": m, "error_mean": s["error"]["mean"], "error_std": s["error"]["std"],
                     "xcorr_mean": s["cross_corr"]["mean"], "xcorr_std": s["cross_corr"]["std"],
                     "xcorr_continuous_mean": s["cross_corr_continuous"]["mean"],
                     "xcorr_continuous_std": s["cross_corr_continuous"]["std"]})
    write_table_csv(rows, path)
