"""Imputation with a trained model, plus the Mean and LOCF baselines."""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Sequence as Seq

import numpy as np
import torch

from .datamodel import HeterogeneousDataset, Sequence, apply_overlay
from .errors import ConfigError, DataError, SchemaError
from .preprocess import apply, invert_gaussian
from .seeding import substream_seed
from .training import DTYPES, Checkpoint, collate


@dataclass
class ImputationResult:
    """Completed sequence in data space.

    ``params`` maps attribute name to averaged predictive parameters:
    ``mean``/``var`` (continuous), ``p`` (binary) or ``probs`` (categorical,
    ``T x C``). ``samples`` holds the per-sample point values ``S x T x D``.
    """

    sequence: Sequence
    imputed: np.ndarray  # T x D, True where the value was filled in
    params: dict = field(default_factory=dict)
    n_samples: int = 1
    samples: np.ndarray | None = None

    def uncertainty(self, schema) -> np.ndarray:
        """Per-cell predictive variance (continuous) or probability of the chosen value."""
        T = self.sequence.length
        out = np.full((T, len(schema)), np.nan)
        for d, a in enumerate(schema):
            par = self.params.get(a.name)
            if par is None:
                continue
            if a.is_continuous:
                out[:, d] = par["var"]
            elif a.kind == "binary":
                x = self.sequence.values[:, d]
                out[:, d] = np.where(x == 1, par["p"], 1 - par["p"])
            else:
                codes = self.sequence.values[:, d].astype(int)
                out[:, d] = par["probs"][np.arange(T), codes]
        return np.where(self.imputed, out, np.nan)


def _check_schema(ds_schema, cp: Checkpoint):
    if tuple(ds_schema) != tuple(cp.schema):
        raise SchemaError("dataset schema does not match the checkpoint schema")


def _sequence_noise(seq_id: str, seed: int, S: int, T: int, L: int, K: int):
    rng = np.random.default_rng(substream_seed(seed, "imputation", zlib.crc32(seq_id.encode())))
    u = rng.random((S, T, L))
    tiny = np.finfo(np.float64).tiny
    gumbel = -np.log(np.maximum(-np.log(np.maximum(u, tiny)), tiny))
    eps = rng.standard_normal((S, T, K))
    return gumbel, eps


def _majority(votes: np.ndarray, n_classes: int, tie_break: np.ndarray) -> np.ndarray:
    """Most frequent class over axis 0; ties go to the higher averaged probability."""
    counts = np.stack([(votes == c).sum(0) for c in range(n_classes)], -1).astype(np.float64)
    return np.argmax(counts + 1e-6 * tie_break, axis=-1)


@torch.no_grad()
def impute_dataset(ds: HeterogeneousDataset, overlays: Seq[np.ndarray] | None, cp: Checkpoint,
                   n_samples: int = 10, seed: int = 0, z_mode: str = "sample", best: bool = False,
                   batch_size: int = 64, keep_samples: bool = False) -> list[ImputationResult]:
    """Filter each sequence forward ``n_samples`` times and average the decoded values."""
    if n_samples < 1:
        raise ConfigError("need at least one imputation sample")
    if z_mode not in ("sample", "mean"):
        raise ConfigError(f"z_mode must be 'sample' or 'mean', got {z_mode!r}")
    _check_schema(ds.schema, cp)
    masked = apply_overlay(ds, overlays) if overlays is not None else ds
    model = cp.build_model(best=best)
    ts = cp.transform
    dtype = DTYPES[cp.config.dtype]
    S = n_samples
    results: list[ImputationResult] = []
    for k in range(0, masked.N, batch_size):
        chunk = masked.sequences[k:k + batch_size]
        enc = [apply(ts, s) for s in chunk]
        batch = collate([e for e in enc for _ in range(S)], dtype)
        T = batch.x.shape[1]
        gumbel = np.zeros((len(chunk) * S, T, model.L))
        eps = np.zeros((len(chunk) * S, T, model.K))
        for i, s in enumerate(chunk):
            g, e = _sequence_noise(s.id, seed, S, s.length, model.L, model.K)
            gumbel[i * S:(i + 1) * S, :s.length] = g
            eps[i * S:(i + 1) * S, :s.length] = e
        noise = (torch.as_tensor(gumbel, dtype=dtype), torch.as_tensor(eps, dtype=dtype))
        out = model.run(batch.x, batch.attr_mask, noise=noise, hard=True, z_mode=z_mode, keep_params=True)
        steps = out["params"]
        for i, seq in enumerate(chunk):
            rows = slice(i * S, (i + 1) * S)
            results.append(_summarize(seq, [lp for lp in steps[:seq.length]], rows, ts, S, keep_samples))
    return results


def _summarize(seq: Sequence, steps, rows, ts, S, keep_samples) -> ImputationResult:
    T, D = seq.length, len(ts.schema)
    point = np.empty((T, D))
    samples = np.empty((S, T, D))
    params = {}
    for d, a in enumerate(ts.schema):
        if a.is_continuous:
            mean = np.stack([lp[d]["mean"][rows].numpy() for lp in steps], 1)  # S x T
            var = np.stack([lp[d]["var"][rows].numpy() for lp in steps], 1)
            m, v = invert_gaussian(ts, d, mean, var)
            samples[:, :, d] = m
            point[:, d] = m.mean(0)
            params[a.name] = {"mean": m.mean(0), "var": v.mean(0) + m.var(0)}
        elif a.kind == "binary":
            p = np.stack([lp[d]["p"][rows].numpy() for lp in steps], 1)
            votes = (p > 0.5).astype(int)
            samples[:, :, d] = votes
            pbar = p.mean(0)
            point[:, d] = _majority(votes, 2, np.stack([1 - pbar, pbar], -1))
            params[a.name] = {"p": pbar}
        else:
            logp = np.stack([lp[d]["log_probs"][rows].numpy() for lp in steps], 1)  # S x T x C
            probs = np.exp(logp)
            votes = probs.argmax(-1)
            samples[:, :, d] = votes
            pbar = probs.mean(0)
            point[:, d] = _majority(votes, a.num_classes, pbar)
            params[a.name] = {"probs": pbar}
    return _complete(seq, point, params, S, samples if keep_samples else None)


def _complete(seq: Sequence, point: np.ndarray, params=None, S=1, samples=None) -> ImputationResult:
    filled = np.where(seq.mask, seq.values, point)
    completed = Sequence(seq.id, filled, np.ones_like(seq.mask))
    return ImputationResult(completed, ~seq.mask, params or {}, S, samples)


def impute_sequence(seq: Sequence, overlay: np.ndarray | None, cp: Checkpoint, n_samples: int = 10,
                    seed: int = 0, **kw) -> ImputationResult:
    ds = HeterogeneousDataset(cp.schema, [seq])
    return impute_dataset(ds, None if overlay is None else [overlay], cp, n_samples, seed, **kw)[0]


# ---------------------------------------------------------------- baselines

def mean_statistics(ds_train: HeterogeneousDataset) -> np.ndarray:
    """Training mean (continuous) or mode (discrete) per attribute, in data space."""
    stats = np.empty(ds_train.D)
    for d, a in enumerate(ds_train.schema):
        vals = np.concatenate([s.values[s.mask[:, d], d] for s in ds_train.sequences])
        if vals.size == 0:
            raise DataError(f"attribute {a.name!r} is never observed in the training data")
        if a.is_continuous:
            stats[d] = vals.mean()
        else:
            codes, counts = np.unique(vals, return_counts=True)
            stats[d] = codes[np.argmax(counts)]
    return stats


def impute_mean(ds_train: HeterogeneousDataset | np.ndarray, seq: Sequence,
                overlay: np.ndarray | None = None) -> Sequence:
    stats = ds_train if isinstance(ds_train, np.ndarray) else mean_statistics(ds_train)
    if overlay is not None:
        seq = seq.with_mask(seq.mask & ~np.asarray(overlay, dtype=bool))
    point = np.broadcast_to(stats, seq.values.shape)
    return _complete(seq, point).sequence


def impute_locf(seq: Sequence, overlay: np.ndarray | None = None, names: Seq[str] | None = None,
                fallback: np.ndarray | None = None) -> Sequence:
    """Carry the last observation forward; leading gaps take the first observation.

    Attributes with no observation raise unless ``fallback`` supplies a value.
    """
    if overlay is not None:
        seq = seq.with_mask(seq.mask & ~np.asarray(overlay, dtype=bool))
    T, D = seq.values.shape
    point = np.empty((T, D))
    for d in range(D):
        obs = np.flatnonzero(seq.mask[:, d])
        if obs.size == 0:
            if fallback is None:
                name = names[d] if names is not None else str(d)
                raise DataError(f"sequence {seq.id}: attribute {name!r} has no observed value to carry")
            point[:, d] = fallback[d]
            continue
        last = np.maximum.accumulate(np.where(seq.mask[:, d], np.arange(T), -1))
        last = np.where(last < 0, obs[0], last)
        point[:, d] = seq.values[last, d]
    return _complete(seq, point).sequence


def impute_baseline(method: str, ds: HeterogeneousDataset, overlays, ds_train: HeterogeneousDataset,
                    locf_fallback: bool = True) -> list[Sequence]:
    """Dataset-level Mean or LOCF; ``ds_train`` should already exclude hidden cells."""
    stats = mean_statistics(ds_train)
    overlays = overlays if overlays is not None else [None] * ds.N
    if method == "mean":
        return [impute_mean(stats, s, o) for s, o in zip(ds.sequences, overlays)]
    if method == "locf":
        fb = stats if locf_fallback else None
        return [impute_locf(s, o, ds.names, fb) for s, o in zip(ds.sequences, overlays)]
    raise ConfigError(f"unknown baseline {method!r}")
