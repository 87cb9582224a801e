"""Loader for Physionet-style per-patient hourly CSV exports.

Each patient is one ``<patient_id>.csv`` with an integer hour column ``t``
(0..47) and one column per schema variable; empty cells are missing.
Variables absent from a file are treated as never measured. The dataset
itself is license-gated and not bundled.
"""

from __future__ import annotations

import logging
from importlib import resources
from pathlib import Path

import numpy as np
import pandas as pd

from .datamodel import HeterogeneousDataset, Sequence, read_schema
from .errors import DataError, ResamplingError, SchemaError

log = logging.getLogger(__name__)

HOURS = 48


def physionet_schema_path() -> Path:
    return Path(str(resources.files("shivae") / "data" / "physionet_schema.yaml"))


def load_physionet_format(directory, schema_path=None, hours: int = HOURS) -> HeterogeneousDataset:
    directory = Path(directory)
    schema = read_schema(schema_path or physionet_schema_path())
    names = [a.name for a in schema]
    files = sorted(directory.glob("*.csv"))
    if not files:
        raise DataError(f"no patient CSV files in {directory}")
    seqs = []
    for f in files:
        df = pd.read_csv(f, keep_default_na=False, na_values=[""],
                     float_precision="round_trip")
        unknown = [c for c in df.columns if c != "t" and c not in names]
        if unknown:
            raise SchemaError(f"{f.name}: unknown column(s) {unknown}")
        if "t" not in df.columns:
            raise ResamplingError(f"{f.name}: missing hour column 't'")
        t = df["t"].to_numpy(dtype=np.float64)
        if (np.isnan(t).any() or (t != np.round(t)).any() or (t < 0).any() or (t >= hours).any()
                or len(np.unique(t)) != len(t)):
            raise ResamplingError(f"{f.name}: rows are not on a unique hourly grid 0..{hours - 1}")
        if len(t) < hours:
            log.warning("%s: %d of %d hourly rows present; padding the rest as missing", f.name, len(t), hours)
        values = np.full((hours, len(names)), np.nan)
        rows = t.astype(int)
        for d, n in enumerate(names):
            if n in df.columns:
                values[rows, d] = df[n].to_numpy(dtype=np.float64)
        seqs.append(Sequence.from_values(f.stem, values))
    return HeterogeneousDataset(schema, seqs)


def write_physionet_format(ds: HeterogeneousDataset, directory) -> None:
    """Write one hourly CSV per sequence (inverse of the loader)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for s in ds.sequences:
        df = pd.DataFrame(np.where(s.mask, s.values, np.nan), columns=ds.names)
        df.insert(0, "t", np.arange(s.length))
        df.to_csv(directory / f"{s.id}.csv", index=False, na_rep="")
