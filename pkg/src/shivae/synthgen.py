"""Synthetic heterogeneous HMM benchmark and burst-missing overlays."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence as Seq

import numpy as np

from .datamodel import AttributeSchema, HeterogeneousDataset, MaskSuite, Sequence, run_lengths  # noqa: F401
from .errors import ConfigError, InfeasibleMaskError

RATE_TOLERANCE = 0.02


@dataclass(frozen=True)
class EmissionSpec:
    """Per-state emission parameters of one attribute.

    ``params`` keys by kind: real ``mean``/``std``; positive ``log_mean``/``log_std``;
    binary ``p``; categorical ``probs`` (one simplex per state).
    """

    name: str
    kind: str
    params: dict

    @property
    def num_classes(self) -> int | None:
        if self.kind == "categorical":
            return len(self.params["probs"][0])
        return None

    def schema(self) -> AttributeSchema:
        return AttributeSchema(self.name, self.kind, self.num_classes)


def default_emissions(num_states: int = 3) -> list[EmissionSpec]:
    if num_states != 3:
        # spread the same families evenly over the requested number of states
        loc = np.linspace(-1.0, 1.0, num_states) if num_states > 1 else np.zeros(1)
        probs = [np.roll(np.r_[0.8, np.full(2, 0.1)], k % 3).tolist() for k in range(num_states)]
        return [
            EmissionSpec("real", "real", {"mean": (2.0 * loc).tolist(), "std": [0.5] * num_states}),
            EmissionSpec("positive", "positive",
                         {"log_mean": (0.5 + loc).tolist(), "log_std": [0.25] * num_states}),
            EmissionSpec("binary", "binary", {"p": (0.5 + 0.4 * loc).tolist()}),
            EmissionSpec("categorical", "categorical", {"probs": probs}),
        ]
    return [
        EmissionSpec("real", "real", {"mean": [-2.0, 0.0, 2.0], "std": [0.5, 0.5, 0.5]}),
        EmissionSpec("positive", "positive", {"log_mean": [-0.5, 0.5, 1.5], "log_std": [0.25, 0.25, 0.25]}),
        EmissionSpec("binary", "binary", {"p": [0.1, 0.5, 0.9]}),
        EmissionSpec("categorical", "categorical",
                     {"probs": [[0.8, 0.1, 0.1], [0.1, 0.8, 0.1], [0.1, 0.1, 0.8]]}),
    ]


def smooth_transition(num_states: int, self_prob: float = 0.90) -> np.ndarray:
    if num_states == 1:
        return np.ones((1, 1))
    off = (1.0 - self_prob) / (num_states - 1)
    A = np.full((num_states, num_states), off)
    np.fill_diagonal(A, self_prob)
    return A


@dataclass
class HmmConfig:
    num_states: int = 3
    num_sequences: int = 1000
    length: int = 100
    transition: np.ndarray | None = None
    initial: np.ndarray | None = None
    emissions: list[EmissionSpec] = field(default_factory=list)
    seed: int = 0

    def __post_init__(self):
        if self.transition is None:
            self.transition = smooth_transition(self.num_states)
        if self.initial is None:
            self.initial = np.full(self.num_states, 1.0 / self.num_states)
        if not self.emissions:
            self.emissions = default_emissions(self.num_states)
        self.transition = np.asarray(self.transition, dtype=np.float64)
        self.initial = np.asarray(self.initial, dtype=np.float64)
        self.validate()

    def validate(self) -> None:
        S = self.num_states
        if S < 1 or self.num_sequences < 1 or self.length < 1:
            raise ConfigError("num_states, num_sequences and length must be positive")
        A = self.transition
        if A.shape != (S, S) or (A < 0).any() or np.abs(A.sum(1) - 1).max() > 1e-12:
            raise ConfigError("transition must be a row-stochastic num_states x num_states matrix")
        pi = self.initial
        if pi.shape != (S,) or (pi < 0).any() or abs(pi.sum() - 1) > 1e-12:
            raise ConfigError("initial distribution must be a simplex vector")
        for em in self.emissions:
            _check_emission(em, S)

    @property
    def schema(self) -> tuple[AttributeSchema, ...]:
        return tuple(e.schema() for e in self.emissions)

    @classmethod
    def from_dict(cls, doc: dict) -> "HmmConfig":
        doc = dict(doc or {})
        S = int(doc.get("num_states", 3))
        transition = doc.get("transition")
        if transition is None and "self_prob" in doc:
            transition = smooth_transition(S, float(doc["self_prob"]))
        emissions = [EmissionSpec(e["name"], e["kind"], e["params"]) for e in doc.get("emissions", [])]
        try:
            return cls(num_states=S, num_sequences=int(doc.get("num_sequences", 1000)),
                       length=int(doc.get("length", 100)), transition=transition,
                       initial=doc.get("initial"), emissions=emissions, seed=int(doc.get("seed", 0)))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed HMM config: {exc}") from exc

    def to_dict(self) -> dict:
        return {
            "num_states": self.num_states, "num_sequences": self.num_sequences, "length": self.length,
            "transition": self.transition.tolist(), "initial": self.initial.tolist(), "seed": self.seed,
            "emissions": [{"name": e.name, "kind": e.kind, "params": e.params} for e in self.emissions],
        }


def _check_emission(em: EmissionSpec, S: int) -> None:
    p = em.params

    def per_state(key):
        if key not in p:
            raise ConfigError(f"emission {em.name!r} ({em.kind}) needs {key!r}")
        arr = np.asarray(p[key], dtype=np.float64)
        if arr.shape[0] != S:
            raise ConfigError(f"emission {em.name!r}: {key!r} needs one entry per state")
        return arr

    if em.kind == "real":
        per_state("mean")
        if (per_state("std") < 0).any():
            raise ConfigError(f"emission {em.name!r}: negative std")
    elif em.kind == "positive":
        per_state("log_mean")
        if (per_state("log_std") < 0).any():
            raise ConfigError(f"emission {em.name!r}: negative log_std")
    elif em.kind == "binary":
        prob = per_state("p")
        if ((prob < 0) | (prob > 1)).any():
            raise ConfigError(f"emission {em.name!r}: p outside [0, 1]")
    elif em.kind == "categorical":
        probs = per_state("probs")
        if probs.ndim != 2 or probs.shape[1] < 2 or (probs < 0).any() or np.abs(probs.sum(1) - 1).max() > 1e-9:
            raise ConfigError(f"emission {em.name!r}: probs must be one simplex (C >= 2) per state")
    else:
        raise ConfigError(f"emission {em.name!r}: unknown kind {em.kind!r}")


def simulate_chain(transition, initial, n_chains: int, length: int, rng) -> np.ndarray:
    """Sample ``n_chains`` state paths of ``length`` steps."""
    A = np.asarray(transition)
    cum_A = np.cumsum(A, axis=1)
    cum_pi = np.cumsum(initial)
    states = np.empty((n_chains, length), dtype=np.int64)
    u = rng.random((n_chains, length))
    # second comparison guards float round-off in the last cumulative entry
    states[:, 0] = np.minimum((u[:, 0, None] >= cum_pi[None, :]).sum(1), len(cum_pi) - 1)
    for t in range(1, length):
        rows = cum_A[states[:, t - 1]]
        states[:, t] = np.minimum((u[:, t, None] >= rows).sum(1), A.shape[0] - 1)
    return states


def emit(em: EmissionSpec, states: np.ndarray, rng) -> np.ndarray:
    p = em.params
    if em.kind == "real":
        mean, std = np.asarray(p["mean"]), np.asarray(p["std"])
        return mean[states] + std[states] * rng.standard_normal(states.shape)
    if em.kind == "positive":
        mu, sd = np.asarray(p["log_mean"]), np.asarray(p["log_std"])
        return np.exp(mu[states] + sd[states] * rng.standard_normal(states.shape))
    if em.kind == "binary":
        prob = np.asarray(p["p"])
        return (rng.random(states.shape) < prob[states]).astype(np.float64)
    probs = np.asarray(p["probs"], dtype=np.float64)
    cum = np.cumsum(probs, axis=1)[states]
    u = rng.random(states.shape)
    return np.minimum((u[..., None] >= cum).sum(-1), probs.shape[1] - 1).astype(np.float64)


def sample_hmm_dataset(cfg: HmmConfig, return_states: bool = False):
    """Draw ``cfg.num_sequences`` fully observed sequences from the HMM."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    states = simulate_chain(cfg.transition, cfg.initial, cfg.num_sequences, cfg.length, rng)
    cols = [emit(em, states, rng) for em in cfg.emissions]
    values = np.stack(cols, axis=-1)
    width = len(str(cfg.num_sequences - 1))
    seqs = [Sequence(f"s{n:0{width}d}", values[n], np.ones_like(values[n], dtype=bool))
            for n in range(cfg.num_sequences)]
    ds = HeterogeneousDataset(cfg.schema, seqs)
    return (ds, states) if return_states else ds


def stationary_distribution(transition) -> np.ndarray:
    A = np.asarray(transition)
    w, v = np.linalg.eig(A.T)
    vec = np.real(v[:, np.argmin(np.abs(w - 1))])
    return vec / vec.sum()


# ---------------------------------------------------------------- burst masks

@dataclass(frozen=True)
class BurstSpec:
    min_len: int = 3
    max_len: int = 10
    target_rate: float = 0.1
    num_masks: int = 10
    seed: int = 0
    mode: str = "per_attribute"  # or "global"

    def __post_init__(self):
        if not 1 <= self.min_len <= self.max_len:
            raise ConfigError(f"need 1 <= min_len <= max_len, got {self.min_len}, {self.max_len}")
        if not 0 <= self.target_rate < 1:
            raise ConfigError(f"target_rate must be in [0, 1), got {self.target_rate}")
        if self.num_masks < 1:
            raise ConfigError("num_masks must be >= 1")
        if self.mode not in ("per_attribute", "global"):
            raise ConfigError(f"unknown rate mode {self.mode!r}")


_MAX_FAILURES = 200
_MAX_RESTARTS = 20


def _fill_bursts(observed: np.ndarray, rate: float, spec: BurstSpec, rng, label: str) -> np.ndarray:
    """Hide bursts in a ``T x K`` block of columns; bursts run along axis 0.

    The achieved fraction of hidden observed cells is pooled over the block.
    Proposals that overlap or touch an existing burst are rejected so every
    maximal hidden run is exactly one burst.
    """
    T = observed.shape[0]
    n_obs = int(observed.sum())
    hidden = np.zeros_like(observed)
    if rate == 0 or n_obs == 0:
        if rate > 0:
            raise InfeasibleMaskError(f"attribute {label}: no observed cells to hide")
        return hidden
    if spec.min_len > T:
        raise ConfigError(f"min burst length {spec.min_len} exceeds sequence length {T}")
    target = int(round(rate * n_obs))
    lo = max(0, int(np.ceil((rate - RATE_TOLERANCE) * n_obs - 1e-9)))
    hi = int(np.floor((rate + RATE_TOLERANCE) * n_obs + 1e-9))
    if lo > hi or lo > n_obs:
        raise InfeasibleMaskError(f"attribute {label}: rate {rate} unreachable with {n_obs} observed cells")

    for _ in range(_MAX_RESTARTS):
        hidden[:] = False
        count = 0
        failures = 0
        while count < target:
            candidates = np.flatnonzero((observed & ~hidden).ravel())
            if candidates.size == 0:
                break
            flat = candidates[rng.integers(candidates.size)]
            start, col = divmod(int(flat), observed.shape[1])
            length = int(rng.integers(spec.min_len, spec.max_len + 1))
            stop = min(start + length, T)
            touch = hidden[max(start - 1, 0):min(stop + 1, T), col]
            new = int(observed[start:stop, col].sum())
            if touch.any() or count + new > hi:
                failures += 1
                if failures >= _MAX_FAILURES or (count >= lo and failures >= _MAX_FAILURES // 4):
                    break
                continue
            hidden[start:stop, col] |= observed[start:stop, col]
            count += new
            failures = 0
        if lo <= count <= hi:
            return hidden
    raise InfeasibleMaskError(
        f"attribute {label}: could not reach rate {rate} (+/- {RATE_TOLERANCE}) with bursts "
        f"of length {spec.min_len}..{spec.max_len}")


def generate_burst_mask(seq: Sequence, spec: BurstSpec, rng, names: Seq[str] | None = None) -> np.ndarray:
    """Return a ``T x D`` overlay (True = artificially hidden) for one sequence."""
    observed = np.asarray(seq.mask, dtype=bool)
    D = observed.shape[1]
    names = list(names) if names is not None else [str(d) for d in range(D)]
    if spec.mode == "global":
        return _fill_bursts(observed, spec.target_rate, spec, rng, "<all>")
    overlay = np.zeros_like(observed)
    for d in range(D):
        label = f"{names[d]!r} in sequence {seq.id}"
        overlay[:, d:d + 1] = _fill_bursts(observed[:, d:d + 1], spec.target_rate, spec, rng, label)
    return overlay


def generate_mask_suite(ds: HeterogeneousDataset, spec: BurstSpec) -> MaskSuite:
    """``spec.num_masks`` independent overlays with seeds derived from ``spec.seed``."""
    replicates = []
    for rep in np.random.SeedSequence(spec.seed).spawn(spec.num_masks):
        streams = rep.spawn(ds.N)
        replicates.append(tuple(
            generate_burst_mask(seq, spec, np.random.default_rng(ss), ds.names)
            for seq, ss in zip(ds.sequences, streams)))
    return MaskSuite(tuple(replicates), spec.target_rate, tuple(s.id for s in ds.sequences))
