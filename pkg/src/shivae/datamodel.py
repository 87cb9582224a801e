"""Heterogeneous sequence data model, missing-mask semantics and file formats.

Values live in a ``T x D`` float table with NaN as the sentinel for missing
cells; the boolean mask (True = observed) is authoritative. Categorical values
are integer codes ``0..C-1`` stored in the same float table.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence as Seq

import numpy as np
import pandas as pd
import yaml

from .errors import ConfigError, DataError, SchemaError

KINDS = ("real", "positive", "binary", "categorical")
CONTINUOUS = ("real", "positive")
DISCRETE = ("binary", "categorical")


@dataclass(frozen=True)
class AttributeSchema:
    name: str
    kind: str
    num_classes: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"attribute {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == "categorical":
            if self.num_classes is None or int(self.num_classes) < 2:
                raise SchemaError(f"attribute {self.name!r}: categorical needs num_classes >= 2")
            object.__setattr__(self, "num_classes", int(self.num_classes))
        elif self.num_classes is not None:
            raise SchemaError(f"attribute {self.name!r}: num_classes only applies to categorical")

    @property
    def is_continuous(self) -> bool:
        return self.kind in CONTINUOUS

    @property
    def width(self) -> int:
        """Number of encoded columns (one-hot width for categorical)."""
        return self.num_classes if self.kind == "categorical" else 1

    def to_dict(self) -> dict:
        d = {"name": self.name, "kind": self.kind}
        if self.num_classes is not None:
            d["num_classes"] = self.num_classes
        return d


def check_schema(schema: Seq[AttributeSchema]) -> tuple[AttributeSchema, ...]:
    schema = tuple(schema)
    names = [a.name for a in schema]
    dup = {n for n in names if names.count(n) > 1}
    if dup:
        raise SchemaError(f"duplicate attribute names: {sorted(dup)}")
    if not schema:
        raise SchemaError("schema has no attributes")
    return schema


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Sequence:
    """One multivariate sequence. ``mask[t, d]`` is True when observed."""

    id: str
    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        mask = np.asarray(self.mask, dtype=bool)
        if values.ndim == 1:
            values = values[:, None]
        if mask.ndim == 1:
            mask = mask[:, None]
        object.__setattr__(self, "id", str(self.id))
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "mask", _frozen(mask))

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @classmethod
    def from_values(cls, id: str, values) -> "Sequence":
        """Build a sequence whose mask is derived from NaN positions."""
        values = np.asarray(values, dtype=np.float64)
        return cls(id, values, ~np.isnan(values))

    def with_mask(self, mask: np.ndarray) -> "Sequence":
        values = np.where(mask, self.values, np.nan)
        return Sequence(self.id, values, mask)


@dataclass(frozen=True)
class HeterogeneousDataset:
    schema: tuple[AttributeSchema, ...]
    sequences: tuple[Sequence, ...]

    def __post_init__(self):
        object.__setattr__(self, "schema", check_schema(self.schema))
        object.__setattr__(self, "sequences", tuple(self.sequences))

    @property
    def D(self) -> int:
        return len(self.schema)

    @property
    def N(self) -> int:
        return len(self.sequences)

    @property
    def names(self) -> list[str]:
        return [a.name for a in self.schema]

    def __len__(self):
        return len(self.sequences)

    def subset(self, indices: Iterable[int]) -> "HeterogeneousDataset":
        return HeterogeneousDataset(self.schema, [self.sequences[i] for i in indices])

    def by_id(self) -> dict[str, Sequence]:
        return {s.id: s for s in self.sequences}

    def select_ids(self, ids: Iterable[str]) -> "HeterogeneousDataset":
        lookup = self.by_id()
        return HeterogeneousDataset(self.schema, [lookup[i] for i in ids])


@dataclass(frozen=True)
class MaskSuite:
    """Replicated burst overlays. ``masks[r][n]`` is the ``T_n x D`` overlay
    of replicate ``r`` for sequence ``n``; True marks an artificially hidden cell."""

    masks: tuple
    target_rate: float
    sequence_ids: tuple[str, ...] = field(default=())

    def __len__(self):
        return len(self.masks)


def partition_observed(x_t, mask_t) -> tuple[set[int], set[int]]:
    """Split attribute indices (1-based) into observed and missing sets."""
    x_t = np.asarray(x_t)
    mask_t = np.asarray(mask_t, dtype=bool)
    if x_t.shape != mask_t.shape or x_t.ndim != 1:
        raise SchemaError(f"dimension mismatch: values {x_t.shape} vs mask {mask_t.shape}")
    observed = {i + 1 for i in np.flatnonzero(mask_t)}
    missing = {i + 1 for i in np.flatnonzero(~mask_t)}
    return observed, missing


@dataclass
class Violation:
    kind: str
    sequence: str
    t: int | None = None
    d: int | None = None
    detail: str = ""

    def __str__(self):
        where = self.sequence
        if self.t is not None:
            where += f" t={self.t}"
        if self.d is not None:
            where += f" d={self.d}"
        return f"{self.kind} at {where}: {self.detail}"


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self):
        return self.ok


def _cell_problem(attr: AttributeSchema, v: float) -> str | None:
    if np.isnan(v):
        return "NaN in observed cell"
    if not np.isfinite(v):
        return "non-finite value"
    if attr.kind == "positive" and v <= 0:
        return f"positive attribute has value {v}"
    if attr.kind == "binary" and v not in (0.0, 1.0):
        return f"binary attribute has value {v}"
    if attr.kind == "categorical" and (v != int(v) or not 0 <= v < attr.num_classes):
        return f"categorical attribute has code {v} outside 0..{attr.num_classes - 1}"
    return None


def validate_dataset(ds: HeterogeneousDataset) -> ValidationReport:
    """Collect every violation instead of raising on the first one."""
    report = ValidationReport()
    if ds.N < 1:
        report.violations.append(Violation("empty", "<dataset>", detail="no sequences"))
    seen = set()
    for seq in ds.sequences:
        if seq.id in seen:
            report.violations.append(Violation("duplicate_id", seq.id, detail="sequence id repeated"))
        seen.add(seq.id)
        if seq.values.ndim != 2 or seq.values.shape[1] != ds.D:
            report.violations.append(
                Violation("shape", seq.id, detail=f"values shape {seq.values.shape}, expected (T, {ds.D})"))
            continue
        if seq.mask.shape != seq.values.shape:
            report.violations.append(
                Violation("shape", seq.id, detail=f"mask shape {seq.mask.shape} != values {seq.values.shape}"))
            continue
        if seq.length < 1:
            report.violations.append(Violation("shape", seq.id, detail="empty sequence"))
        for d, attr in enumerate(ds.schema):
            col = seq.values[:, d]
            for t in np.flatnonzero(seq.mask[:, d]):
                problem = _cell_problem(attr, col[t])
                if problem:
                    kind = "nan" if problem.startswith("NaN") else "type"
                    report.violations.append(Violation(kind, seq.id, int(t), d, problem))
    return report


def require_valid(ds: HeterogeneousDataset) -> None:
    report = validate_dataset(ds)
    if not report.ok:
        head = "; ".join(str(v) for v in report.violations[:5])
        raise DataError(f"dataset has {len(report.violations)} violation(s): {head}")


def apply_overlay(ds: HeterogeneousDataset, overlay: Seq[np.ndarray]) -> HeterogeneousDataset:
    """Return a copy of ``ds`` where overlay-hidden cells are treated as missing."""
    if len(overlay) != ds.N:
        raise DataError(f"overlay covers {len(overlay)} sequences, dataset has {ds.N}")
    out = []
    for seq, ov in zip(ds.sequences, overlay):
        ov = np.asarray(ov, dtype=bool)
        if ov.shape != seq.mask.shape:
            raise DataError(f"overlay shape {ov.shape} != sequence {seq.id} shape {seq.mask.shape}")
        out.append(seq.with_mask(seq.mask & ~ov))
    return HeterogeneousDataset(ds.schema, out)


def run_lengths(column: np.ndarray) -> list[tuple[int, int]]:
    """Maximal runs of True as ``(start, length)`` pairs."""
    col = np.asarray(column, dtype=bool).astype(np.int8)
    edges = np.diff(np.r_[0, col, 0])
    starts = np.flatnonzero(edges == 1)
    stops = np.flatnonzero(edges == -1)
    return [(int(a), int(b - a)) for a, b in zip(starts, stops)]


# ---------------------------------------------------------------- file formats

def schema_from_dicts(items) -> tuple[AttributeSchema, ...]:
    try:
        return check_schema(
            AttributeSchema(str(a["name"]), str(a["kind"]), a.get("num_classes")) for a in items)
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"malformed schema entry: {exc}") from exc


def read_schema(path) -> tuple[AttributeSchema, ...]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"schema file not found: {path}")
    doc = yaml.safe_load(path.read_text())
    items = doc.get("attributes") if isinstance(doc, dict) else doc
    if not isinstance(items, list):
        raise SchemaError(f"{path}: expected an 'attributes' list")
    return schema_from_dicts(items)


def write_schema(schema: Seq[AttributeSchema], path) -> None:
    doc = {"attributes": [a.to_dict() for a in schema]}
    Path(path).write_text(yaml.safe_dump(doc, sort_keys=False))


def _format_cell(attr: AttributeSchema, v: float, observed: bool) -> str:
    if not observed:
        return ""
    if attr.kind in DISCRETE:
        return str(int(v))
    return repr(float(v))


def write_dataset_csv(ds: HeterogeneousDataset, path) -> None:
    header = ["sequence_id", "t", *ds.names]
    lines = [",".join(header)]
    for seq in ds.sequences:
        for t in range(seq.length):
            cells = [_format_cell(a, seq.values[t, d], seq.mask[t, d]) for d, a in enumerate(ds.schema)]
            lines.append(",".join([seq.id, str(t), *cells]))
    Path(path).write_text("\n".join(lines) + "\n")


def _read_table(path, names: Seq[str]) -> list[tuple[str, np.ndarray]]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"file not found: {path}")
    df = pd.read_csv(path, dtype={"sequence_id": str}, keep_default_na=False, na_values=[""],
                     float_precision="round_trip")
    expected = ["sequence_id", "t", *names]
    if list(df.columns) != expected:
        unknown = sorted(set(df.columns) - set(expected))
        missing = sorted(set(expected) - set(df.columns))
        raise SchemaError(f"{path}: column mismatch (unknown {unknown}, missing {missing})")
    out = []
    for sid, grp in df.groupby("sequence_id", sort=False):
        t = grp["t"].to_numpy()
        if not np.array_equal(t, np.arange(len(t))):
            raise DataError(f"{path}: sequence {sid} has non-contiguous t index")
        out.append((str(sid), grp[list(names)].to_numpy(dtype=np.float64)))
    return out


def read_dataset_csv(path, schema: Seq[AttributeSchema]) -> HeterogeneousDataset:
    schema = check_schema(schema)
    rows = _read_table(path, [a.name for a in schema])
    return HeterogeneousDataset(schema, [Sequence.from_values(sid, v) for sid, v in rows])


def write_overlay_csv(ds: HeterogeneousDataset, overlay: Seq[np.ndarray], path) -> None:
    lines = [",".join(["sequence_id", "t", *ds.names])]
    for seq, ov in zip(ds.sequences, overlay):
        ov = np.asarray(ov, dtype=bool)
        for t in range(seq.length):
            lines.append(",".join([seq.id, str(t), *("1" if c else "0" for c in ov[t])]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_overlay_csv(path, ds: HeterogeneousDataset) -> list[np.ndarray]:
    """Read an overlay and align it to the sequences of ``ds`` by id."""
    rows = dict(_read_table(path, ds.names))
    out = []
    for seq in ds.sequences:
        if seq.id not in rows:
            raise DataError(f"{path}: no overlay rows for sequence {seq.id}")
        ov = rows[seq.id]
        if ov.shape != seq.mask.shape or np.isnan(ov).any() or not np.isin(ov, (0, 1)).all():
            raise DataError(f"{path}: malformed overlay for sequence {seq.id}")
        out.append(ov.astype(bool))
    return out


def data_paths(directory) -> tuple[Path, Path]:
    directory = Path(directory)
    return directory / "dataset.csv", directory / "schema.yaml"


def save_dataset(ds: HeterogeneousDataset, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    csv_path, schema_path = data_paths(directory)
    write_dataset_csv(ds, csv_path)
    write_schema(ds.schema, schema_path)


def load_dataset(directory, schema_path=None) -> HeterogeneousDataset:
    """Load ``dataset.csv`` from a data directory (or a CSV path directly)."""
    directory = Path(directory)
    if directory.is_file():
        csv_path, default_schema = directory, directory.with_name("schema.yaml")
    else:
        csv_path, default_schema = data_paths(directory)
    schema = read_schema(schema_path or default_schema)
    return read_dataset_csv(csv_path, schema)
