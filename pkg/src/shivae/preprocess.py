"""Normalization, one-hot encoding and zero filling.

Real attributes are standard-scaled; positive attributes are standard-scaled
in log space; binary values pass through; categorical codes become one-hot
blocks of width ``C``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .datamodel import AttributeSchema, HeterogeneousDataset, Sequence, check_schema, schema_from_dicts
from .errors import DataError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EncodedSequence:
    """Network-space view of a sequence.

    ``values`` is ``T x E`` with NaN in missing cells, ``attr_mask`` is the
    ``T x D`` observation mask and ``mask`` its expansion to ``T x E``.
    """

    id: str
    values: np.ndarray
    attr_mask: np.ndarray
    mask: np.ndarray

    @property
    def length(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class TransformState:
    schema: tuple[AttributeSchema, ...]
    loc: np.ndarray  # mean, or mean of log for positive; 0 for discrete
    scale: np.ndarray  # std, or std of log for positive; 1 for discrete
    degenerate: tuple[bool, ...]

    @property
    def widths(self) -> list[int]:
        return [a.width for a in self.schema]

    @property
    def encoded_dim(self) -> int:
        return sum(self.widths)

    @property
    def slices(self) -> list[slice]:
        out, start = [], 0
        for w in self.widths:
            out.append(slice(start, start + w))
            start += w
        return out

    def expand_mask(self, attr_mask: np.ndarray) -> np.ndarray:
        return np.repeat(np.asarray(attr_mask, dtype=bool), self.widths, axis=-1)

    def to_dict(self) -> dict:
        return {
            "schema": [a.to_dict() for a in self.schema],
            "loc": self.loc.tolist(),
            "scale": self.scale.tolist(),
            "degenerate": list(self.degenerate),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TransformState":
        return cls(schema_from_dicts(doc["schema"]), np.asarray(doc["loc"], dtype=np.float64),
                   np.asarray(doc["scale"], dtype=np.float64), tuple(bool(x) for x in doc["degenerate"]))


def fit_transform_state(train: HeterogeneousDataset) -> TransformState:
    """Statistics from observed cells only; apply overlays before calling."""
    schema = check_schema(train.schema)
    loc = np.zeros(len(schema))
    scale = np.ones(len(schema))
    degenerate = [False] * len(schema)
    for d, attr in enumerate(schema):
        if not attr.is_continuous:
            continue
        vals = np.concatenate([s.values[s.mask[:, d], d] for s in train.sequences])
        if vals.size == 0:
            raise DataError(f"attribute {attr.name!r} has no observed values in the training split")
        if attr.kind == "positive":
            if (vals <= 0).any():
                raise DataError(f"positive attribute {attr.name!r} has non-positive observed values")
            vals = np.log(vals)
        loc[d] = vals.mean()
        sd = vals.std()
        if not sd > 0 or vals.size < 2:
            log.warning("attribute %r is constant in the training split; using unit scale", attr.name)
            sd = 1.0
            degenerate[d] = True
        scale[d] = sd
    return TransformState(schema, loc, scale, tuple(degenerate))


def apply(ts: TransformState, seq: Sequence) -> EncodedSequence:
    T = seq.length
    out = np.full((T, ts.encoded_dim), np.nan)
    for d, (attr, sl) in enumerate(zip(ts.schema, ts.slices)):
        obs = seq.mask[:, d]
        x = seq.values[obs, d]
        if attr.kind == "real":
            out[obs, sl.start] = (x - ts.loc[d]) / ts.scale[d]
        elif attr.kind == "positive":
            if (x <= 0).any():
                raise DataError(f"sequence {seq.id}: positive attribute {attr.name!r} has value <= 0")
            out[obs, sl.start] = (np.log(x) - ts.loc[d]) / ts.scale[d]
        elif attr.kind == "binary":
            out[obs, sl.start] = x
        else:
            codes = x.astype(np.int64)
            if ((codes < 0) | (codes >= attr.num_classes) | (codes != x)).any():
                raise DataError(f"sequence {seq.id}: categorical code out of range for {attr.name!r}")
            block = np.zeros((obs.sum(), attr.num_classes))
            block[np.arange(codes.size), codes] = 1.0
            out[obs, sl] = block
    attr_mask = np.array(seq.mask, dtype=bool)
    return EncodedSequence(seq.id, out, attr_mask, ts.expand_mask(attr_mask))


def apply_dataset(ts: TransformState, ds: HeterogeneousDataset) -> list[EncodedSequence]:
    return [apply(ts, s) for s in ds.sequences]


def invert(ts: TransformState, encoded: np.ndarray) -> np.ndarray:
    """Map ``... x E`` encoded values back to ``... x D`` data values."""
    encoded = np.asarray(encoded, dtype=np.float64)
    out = np.empty(encoded.shape[:-1] + (len(ts.schema),))
    for d, (attr, sl) in enumerate(zip(ts.schema, ts.slices)):
        v = encoded[..., sl]
        if attr.kind == "real":
            out[..., d] = v[..., 0] * ts.scale[d] + ts.loc[d]
        elif attr.kind == "positive":
            out[..., d] = np.exp(v[..., 0] * ts.scale[d] + ts.loc[d])
        elif attr.kind == "binary":
            out[..., d] = (v[..., 0] > 0.5).astype(np.float64)
        else:
            out[..., d] = np.argmax(v, axis=-1)
    return out


def invert_gaussian(ts: TransformState, d: int, mean, var) -> tuple[np.ndarray, np.ndarray]:
    """Data-space mean and variance of a Gaussian head in encoded space.

    For positive attributes the head is a Gaussian on the standardized log, so
    in data space it is log-normal with log-location ``m`` and log-variance ``v``;
    the returned moments are ``exp(m + v/2)`` and ``(exp(v) - 1) exp(2m + v)``.
    """
    mean = np.asarray(mean, dtype=np.float64)
    var = np.asarray(var, dtype=np.float64)
    m = mean * ts.scale[d] + ts.loc[d]
    v = var * ts.scale[d] ** 2
    if ts.schema[d].kind == "real":
        return m, v
    if ts.schema[d].kind != "positive":
        raise ValueError(f"attribute {ts.schema[d].name!r} has no Gaussian head")
    return np.exp(m + v / 2), np.expm1(v) * np.exp(2 * m + v)


def zero_fill(encoded, mask=None) -> np.ndarray:
    """Replace missing (NaN or unmasked) encoded entries with 0."""
    encoded = np.asarray(encoded, dtype=np.float64)
    missing = np.isnan(encoded)
    if mask is not None:
        missing |= ~np.asarray(mask, dtype=bool)
    return np.where(missing, 0.0, encoded)
