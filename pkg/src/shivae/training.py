"""Optimization loop: right-padded batches, Adam, beta annealing, global-norm
clipping, validation-based model selection and versioned checkpoints."""

from __future__ import annotations

import copy
import hashlib
import io
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence as Seq

import numpy as np
import torch

from .datamodel import AttributeSchema, HeterogeneousDataset, apply_overlay, require_valid, schema_from_dicts
from .errors import ConfigError, IntegrityError, NumericFault, UnsupportedVersionError
from .model import ShiVAE
from .preprocess import EncodedSequence, TransformState, apply_dataset, fit_transform_state
from .seeding import substream_rng, substream_seed

log = logging.getLogger(__name__)

FORMAT_NAME = "shivae-checkpoint"
FORMAT_VERSION = 1

DTYPES = {"float32": torch.float32, "float64": torch.float64}


@dataclass
class TrainConfig:
    epochs: int = 100
    annealing_epochs: int = 20
    learning_rate: float = 5e-3
    batch_size: int = 64
    latent_dim: int = 2
    hidden_dim: int = 10
    n_components: int = 3
    hidden: int = 32
    clip: float = 0.5
    seed: int = 0
    split: tuple[float, float, float] = (0.8, 0.1, 0.1)
    temperature: float = 1.0
    temperature_final: float | None = None
    dtype: str = "float64"

    def __post_init__(self):
        self.split = tuple(float(f) for f in self.split)
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if not 0 < self.annealing_epochs or (self.epochs and self.annealing_epochs > self.epochs):
            raise ConfigError("need 0 < annealing_epochs <= epochs")
        if not self.clip > 0 or not self.learning_rate > 0 or self.batch_size < 1:
            raise ConfigError("clip, learning_rate and batch_size must be positive")
        if len(self.split) != 3 or min(self.split) < 0 or abs(sum(self.split) - 1) > 1e-9:
            raise ConfigError(f"split fractions must be three non-negative numbers summing to 1, got {self.split}")
        if self.dtype not in DTYPES:
            raise ConfigError(f"dtype must be one of {sorted(DTYPES)}")
        if not self.temperature > 0 or (self.temperature_final is not None and not self.temperature_final > 0):
            raise ConfigError("Gumbel-softmax temperatures must be > 0")

    @classmethod
    def from_dict(cls, doc: dict | None) -> "TrainConfig":
        doc = dict(doc or {})
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown training config keys: {sorted(unknown)}")
        try:
            return cls(**doc)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"malformed training config: {exc}") from exc

    def to_dict(self) -> dict:
        d = asdict(self)
        d["split"] = list(self.split)
        return d

    def temperature_at(self, epoch: int) -> float:
        if self.temperature_final is None or self.epochs <= 1:
            return self.temperature
        frac = (epoch - 1) / (self.epochs - 1)
        return self.temperature + frac * (self.temperature_final - self.temperature)


@dataclass
class Checkpoint:
    state: dict
    transform: TransformState
    schema: tuple[AttributeSchema, ...]
    config: TrainConfig
    epoch: int = 0
    history: list = field(default_factory=list)
    split: dict = field(default_factory=dict)
    best_state: dict | None = None
    best_epoch: int | None = None
    version: int = FORMAT_VERSION

    def build_model(self, best: bool = False) -> ShiVAE:
        cfg = self.config
        model = ShiVAE(self.schema, cfg.latent_dim, cfg.hidden_dim, cfg.n_components, cfg.hidden)
        model = model.to(DTYPES[cfg.dtype])
        state = self.best_state if best and self.best_state is not None else self.state
        model.load_state_dict(state)
        model.eval()
        return model


def anneal_beta(epoch: int, cfg: TrainConfig) -> float:
    """Linear warm-up ``min(1, epoch / annealing_epochs)`` for 1-based epochs."""
    if epoch < 1:
        raise ConfigError("epochs are counted from 1")
    return min(1.0, epoch / cfg.annealing_epochs)


@dataclass
class Batch:
    x: torch.Tensor  # B x T x E, zero-filled
    attr_mask: torch.Tensor  # B x T x D
    valid: torch.Tensor  # B x T
    ids: list[str]


def collate(seqs: Seq[EncodedSequence], dtype=torch.float64) -> Batch:
    """Right-pad a group of encoded sequences to their common max length."""
    T = max(s.length for s in seqs)
    E = seqs[0].values.shape[1]
    D = seqs[0].attr_mask.shape[1]
    x = np.zeros((len(seqs), T, E))
    m = np.zeros((len(seqs), T, D), dtype=bool)
    v = np.zeros((len(seqs), T), dtype=bool)
    for i, s in enumerate(seqs):
        x[i, :s.length] = np.where(s.mask, np.nan_to_num(s.values), 0.0)
        m[i, :s.length] = s.attr_mask
        v[i, :s.length] = True
    return Batch(torch.as_tensor(x, dtype=dtype), torch.as_tensor(m), torch.as_tensor(v), [s.id for s in seqs])


def make_batches(seqs: Seq[EncodedSequence], batch_size: int, rng=None, dtype=torch.float64) -> list[Batch]:
    """Shuffle (when ``rng`` is given) and cut into right-padded batches."""
    if not seqs:
        raise ConfigError("cannot batch an empty dataset")
    order = np.arange(len(seqs)) if rng is None else rng.permutation(len(seqs))
    return [collate([seqs[i] for i in order[k:k + batch_size]], dtype)
            for k in range(0, len(seqs), batch_size)]


def clip_gradients(grads: Seq[torch.Tensor | None], threshold: float = 0.5) -> list[torch.Tensor | None]:
    """Rescale so the global L2 norm is at most ``threshold``."""
    if not threshold > 0:
        raise ConfigError("clip threshold must be > 0")
    present = [g for g in grads if g is not None]
    if not present:
        return list(grads)
    norm = torch.sqrt(sum((g.detach() ** 2).sum() for g in present))
    if norm <= threshold:
        return list(grads)
    scale = threshold / norm
    return [None if g is None else g * scale for g in grads]


def split_ids(ds: HeterogeneousDataset, fractions, seed: int) -> dict:
    ids = [s.id for s in ds.sequences]
    order = substream_rng(seed, "split").permutation(len(ids))
    n_train = int(round(fractions[0] * len(ids)))
    n_val = int(round(fractions[1] * len(ids)))
    pick = lambda idx: [ids[i] for i in idx]  # noqa: E731
    return {"train": pick(order[:n_train]), "val": pick(order[n_train:n_train + n_val]),
            "test": pick(order[n_train + n_val:])}


def _epoch_means(rows: list[tuple[int, dict]]) -> dict:
    n = sum(w for w, _ in rows)
    return {k: sum(w * r[k] for w, r in rows) / n for k in ("recon", "kl_z", "kl_s", "total")}


@torch.no_grad()
def evaluate_elbo(model: ShiVAE, batches: list[Batch], beta: float, seed: int, temperature: float = 1.0) -> dict:
    gen = torch.Generator().manual_seed(seed)
    rows = []
    for b in batches:
        terms = model.elbo(b.x, b.attr_mask, b.valid, beta, generator=gen, temperature=temperature)
        rows.append((len(b.ids), terms.as_floats()))
    return _epoch_means(rows)


def init_model(schema, cfg: TrainConfig) -> ShiVAE:
    with torch.random.fork_rng():
        torch.manual_seed(substream_seed(cfg.seed, "init"))
        model = ShiVAE(schema, cfg.latent_dim, cfg.hidden_dim, cfg.n_components, cfg.hidden)
    return model.to(DTYPES[cfg.dtype])


def train(ds: HeterogeneousDataset, overlay: Seq[np.ndarray] | None, cfg: TrainConfig,
          split: dict | None = None, progress=None) -> Checkpoint:
    """Fit the model on the training split; overlay-hidden cells count as missing."""
    require_valid(ds)
    masked = apply_overlay(ds, overlay) if overlay is not None else ds
    split = split or split_ids(ds, cfg.split, cfg.seed)
    train_ds = masked.select_ids(split["train"])
    if train_ds.N == 0:
        raise ConfigError("training split is empty")
    ts = fit_transform_state(train_ds)
    dtype = DTYPES[cfg.dtype]
    train_seqs = apply_dataset(ts, train_ds)
    val_batches = (make_batches(apply_dataset(ts, masked.select_ids(split["val"])), cfg.batch_size, dtype=dtype)
                   if split.get("val") else [])

    model = init_model(ds.schema, cfg)
    cp = Checkpoint(copy.deepcopy(model.state_dict()), ts, ds.schema, cfg, 0, [], split)
    if cfg.epochs == 0:
        return cp

    opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    shuffle_rng = substream_rng(cfg.seed, "training", 0)
    gen = torch.Generator().manual_seed(substream_seed(cfg.seed, "training", 1))
    best_val = -np.inf
    for epoch in range(1, cfg.epochs + 1):
        beta = anneal_beta(epoch, cfg)
        tau = cfg.temperature_at(epoch)
        model.train()
        rows = []
        for b in make_batches(train_seqs, cfg.batch_size, shuffle_rng, dtype):
            opt.zero_grad()
            try:
                terms = model.elbo(b.x, b.attr_mask, b.valid, beta, generator=gen, temperature=tau)
            except NumericFault as exc:
                exc.diagnostics.update(epoch=epoch, batch_ids=b.ids[:10])
                exc.last_good = cp
                raise
            (-terms.total).backward()
            params = [p for p in model.parameters()]
            clipped = clip_gradients([p.grad for p in params], cfg.clip)
            for p, g in zip(params, clipped):
                p.grad = g
            opt.step()
            rows.append((len(b.ids), terms.as_floats()))
        row = {"epoch": epoch, "beta": beta, "temperature": tau, **_epoch_means(rows)}
        model.eval()
        if val_batches:
            val = evaluate_elbo(model, val_batches, 1.0, substream_seed(cfg.seed, "training", 2), tau)
            row.update({f"val_{k}": v for k, v in val.items()})
        cp.history.append(row)
        cp.state = copy.deepcopy(model.state_dict())
        cp.epoch = epoch
        if val_batches and row["val_total"] > best_val:
            best_val = row["val_total"]
            cp.best_state = copy.deepcopy(cp.state)
            cp.best_epoch = epoch
        if progress:
            progress(row)
        log.debug("epoch %d: %s", epoch, row)
    return cp


# ---------------------------------------------------------------- persistence

def _meta(cp: Checkpoint) -> dict:
    return {
        "transform": cp.transform.to_dict(),
        "schema": [a.to_dict() for a in cp.schema],
        "config": cp.config.to_dict(),
        "epoch": cp.epoch,
        "history": cp.history,
        "split": cp.split,
        "best_epoch": cp.best_epoch,
    }


def save_checkpoint(cp: Checkpoint, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.BytesIO()
    torch.save({"state": cp.state, "best_state": cp.best_state, "meta": json.dumps(_meta(cp))}, buf)
    payload = buf.getvalue()
    header = {"format": FORMAT_NAME, "version": cp.version, "size": len(payload),
              "sha256": hashlib.sha256(payload).hexdigest()}
    path.write_bytes(json.dumps(header).encode() + b"\n" + payload)
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if path.is_dir():
        path = path / "final.ckpt"
    if not path.is_file():
        raise IntegrityError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    head, sep, payload = raw.partition(b"\n")
    try:
        header = json.loads(head)
    except (json.JSONDecodeError, UnicodeDecodeError):
        raise IntegrityError(f"{path}: not a checkpoint (unreadable header)") from None
    if not sep or not isinstance(header, dict) or header.get("format") != FORMAT_NAME:
        raise IntegrityError(f"{path}: not a checkpoint file")
    if header.get("version") != FORMAT_VERSION:
        raise UnsupportedVersionError(
            f"{path}: checkpoint format version {header.get('version')} is not supported "
            f"(expected {FORMAT_VERSION})")
    if len(payload) != header.get("size") or hashlib.sha256(payload).hexdigest() != header.get("sha256"):
        raise IntegrityError(f"{path}: checksum mismatch (truncated or corrupt file)")
    blob = torch.load(io.BytesIO(payload), weights_only=True)
    meta = json.loads(blob["meta"])
    return Checkpoint(
        state=blob["state"],
        transform=TransformState.from_dict(meta["transform"]),
        schema=schema_from_dicts(meta["schema"]),
        config=TrainConfig.from_dict(meta["config"]),
        epoch=meta["epoch"],
        history=meta["history"],
        split=meta["split"],
        best_state=blob["best_state"],
        best_epoch=meta["best_epoch"],
    )


def export_history(cp: Checkpoint, path) -> None:
    Path(path).write_text(json.dumps(cp.history, indent=1))
