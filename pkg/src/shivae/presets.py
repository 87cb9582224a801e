"""Experiment presets and synthetic stand-ins for the private datasets."""

from __future__ import annotations

import copy

import numpy as np

from .datamodel import HeterogeneousDataset, Sequence
from .errors import ConfigError
from .synthgen import BurstSpec, EmissionSpec, HmmConfig, generate_burst_mask, sample_hmm_dataset
from .physionet import HOURS

_TRAIN_SYNTHETIC = {"epochs": 100, "annealing_epochs": 20, "latent_dim": 2, "hidden_dim": 10,
                    "n_components": 3, "learning_rate": 5e-3, "batch_size": 64, "split": [0.8, 0.1, 0.1]}
_TRAIN_PHYSIONET = {"epochs": 100, "annealing_epochs": 20, "latent_dim": 35, "hidden_dim": 10,
                    "n_components": 10, "learning_rate": 5e-3, "batch_size": 64, "split": [1 / 3, 1 / 3, 1 / 3]}
_TRAIN_HUMAN = {"epochs": 100, "annealing_epochs": 50, "latent_dim": 5, "hidden_dim": 10,
                "n_components": 3, "learning_rate": 5e-3, "batch_size": 64,
                "split": [135 / 167, 15 / 167, 17 / 167]}

_MASK = {"rate": 0.3, "min_len": 3, "max_len": 10, "num_masks": 10, "mode": "per_attribute"}

PRESETS = {
    "synthetic": {
        "name": "synthetic", "seed": 0,
        "data": {"source": "synthetic", "hmm": {"num_sequences": 1000, "length": 100}},
        "mask": dict(_MASK), "train": dict(_TRAIN_SYNTHETIC),
        "impute": {"samples": 10, "z_mode": "sample"}, "methods": ["shivae", "mean", "locf"],
    },
    "synthetic-desk": {
        "name": "synthetic-desk", "seed": 0,
        "data": {"source": "synthetic", "hmm": {"num_sequences": 200, "length": 50}},
        "mask": dict(_MASK), "train": dict(_TRAIN_SYNTHETIC),
        "impute": {"samples": 10, "z_mode": "sample"}, "methods": ["shivae", "mean", "locf"],
    },
    "physionet": {
        "name": "physionet", "seed": 0,
        "data": {"source": "physionet", "dir": None},
        "mask": dict(_MASK, rate=0.1), "train": dict(_TRAIN_PHYSIONET),
        "impute": {"samples": 10, "z_mode": "sample"}, "methods": ["shivae", "mean", "locf"],
    },
    "human-monitoring": {
        "name": "human-monitoring", "seed": 0,
        "data": {"source": "human_monitoring_standin", "num_sequences": 167, "min_length": 40,
                 "max_length": 120},
        "mask": dict(_MASK, rate=0.15), "train": dict(_TRAIN_HUMAN),
        "impute": {"samples": 10, "z_mode": "sample"}, "methods": ["shivae", "mean", "locf"],
    },
}


def get_preset(name: str) -> dict:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return copy.deepcopy(PRESETS[name])


def merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in (override or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


# name -> (kind, native missing fraction)
HUMAN_MONITORING_ATTRIBUTES = [
    ("distance", "positive", 0.42),
    ("steps_home", "binary", 0.66),
    ("steps_total", "positive", 0.22),
    ("app_usage", "positive", 0.38),
    ("sport", "binary", 0.62),
    ("sleep", "positive", 0.31),
    ("vehicle", "positive", 0.44),
]


def human_monitoring_standin(num_sequences: int = 167, min_length: int = 40, max_length: int = 120,
                             seed: int = 0) -> HeterogeneousDataset:
    """Variable-length daily records with the seven attribute types and native
    burst missingness at the per-attribute rates of the private database."""
    rng = np.random.default_rng(seed)
    emissions = []
    for k, (name, kind, _) in enumerate(HUMAN_MONITORING_ATTRIBUTES):
        if kind == "positive":
            base = 0.3 * k
            emissions.append(EmissionSpec(name, kind, {"log_mean": [base - 0.6, base, base + 0.6],
                                                       "log_std": [0.3, 0.3, 0.3]}))
        else:
            emissions.append(EmissionSpec(name, kind, {"p": [0.15, 0.5, 0.85]}))
    cfg = HmmConfig(num_states=3, num_sequences=num_sequences, length=max_length, emissions=emissions,
                    seed=int(rng.integers(2**31)))
    full = sample_hmm_dataset(cfg)
    lengths = rng.integers(min_length, max_length + 1, size=num_sequences)
    seqs = []
    for s, T in zip(full.sequences, lengths):
        values = s.values[:T]
        mask = np.ones_like(values, dtype=bool)
        for d, (_, _, rate) in enumerate(HUMAN_MONITORING_ATTRIBUTES):
            col = Sequence(s.id, values[:, d:d + 1], mask[:, d:d + 1])
            spec = BurstSpec(target_rate=rate, num_masks=1)
            mask[:, d] &= ~generate_burst_mask(col, spec, rng)[:, 0]
        seqs.append(Sequence(s.id, np.where(mask, values, np.nan), mask))
    return HeterogeneousDataset(full.schema, seqs)


def physionet_standin(num_patients: int = 60, native_rate: float = 0.3, seed: int = 0) -> HeterogeneousDataset:
    """Schema-compatible synthetic ICU panel (35 real variables, 48 hours)."""
    from .physionet import physionet_schema_path
    from .datamodel import read_schema

    schema = read_schema(physionet_schema_path())
    rng = np.random.default_rng(seed)
    emissions = [EmissionSpec(a.name, "real", {"mean": list(rng.normal(0, 2, 3)), "std": [0.5, 0.5, 0.5]})
                 for a in schema]
    cfg = HmmConfig(num_states=3, num_sequences=num_patients, length=HOURS, emissions=emissions,
                    seed=int(rng.integers(2**31)))
    full = sample_hmm_dataset(cfg)
    spec = BurstSpec(target_rate=native_rate, num_masks=1)
    seqs = []
    for s in full.sequences:
        hidden = generate_burst_mask(s, spec, rng)
        seqs.append(s.with_mask(~hidden))
    return HeterogeneousDataset(schema, seqs)
