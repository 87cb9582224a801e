"""Acceptance gate: one test per criterion, one PASS/FAIL line per criterion.

The lines are printed in the pytest terminal summary (see conftest.py), so they
show up in a normal ``pytest`` run without ``-s``.

Set ``SHIVAE_FULL_SCALE=1`` to also run the synthetic benchmark at
N=1000, T=100 (about an hour on a laptop CPU); the desk-scale run
(N=200, T=50) always runs.
"""

from __future__ import annotations

import json
import math
import os
import time

import numpy as np
import pytest
import torch

from shivae.datamodel import HeterogeneousDataset, Sequence, run_lengths
from shivae.imputation import impute_baseline, impute_dataset
from shivae.model import Gaussian, ShiVAE, kl_categorical, kl_gaussian_diag
from shivae.pipeline import run_pipeline, sha256_file
from shivae.physionet import write_physionet_format
from shivae.presets import get_preset, physionet_standin
from shivae.preprocess import apply, fit_transform_state
from shivae.synthgen import BurstSpec, HmmConfig, generate_mask_suite, sample_hmm_dataset
from shivae.training import TrainConfig, collate, train

from conftest import MIXED, random_dataset
from oracles import (brute_class_error, brute_nrmse, brute_phi, brute_xcorr, elbo_oracle_gap, gradient_check)
from shivae.metrics import burst_xcorr, classification_error, nrmse, phi

pytestmark = pytest.mark.acceptance

RESULTS: list[str] = []


def record(n: int, ok: bool, detail: str) -> None:
    RESULTS.append(f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")


# ---------------------------------------------------------------- 1. synthetic end to end

def _synthetic_verdict(run: dict, out_dir) -> tuple[bool, str]:
    reports = {m: json.loads((out_dir / "report" / m / "report.json").read_text())["summary"]
               for m in ("shivae", "mean", "locf")}
    xs = reports["shivae"]["cross_corr_continuous"]["replicates"]
    xm = reports["mean"]["cross_corr_continuous"]["replicates"]
    xl = reports["locf"]["cross_corr_continuous"]["replicates"]
    beats_xcorr = all(s > m and s > l for s, m, l in zip(xs, xm, xl))
    es, em = reports["shivae"]["error"]["mean"], reports["mean"]["error"]["mean"]
    ok = beats_xcorr and es < em and len(xs) == 10
    detail = (f"{len(xs)} replicates; continuous cross-corr Shi-VAE min {min(xs):.3f} vs Mean max {max(xm):.3f}, "
              f"LOCF max {max(xl):.3f}; error Shi-VAE {es:.4f} vs Mean {em:.4f}")
    return ok, detail


def _run_synthetic(preset, out_dir):
    t0 = time.perf_counter()
    run = run_pipeline({"seed": 0}, out_dir, preset=preset)
    return run, time.perf_counter() - t0


def test_criterion_1_synthetic_desk(tmp_path_factory):
    out = tmp_path_factory.mktemp("synthetic_desk")
    run, secs = _run_synthetic("synthetic-desk", out)
    ok, detail = _synthetic_verdict(run, out)
    record(1, ok, f"desk N=200 T=50: {detail}; {secs / 60:.1f} min (expected < 20)")
    assert ok, detail


@pytest.mark.skipif(os.environ.get("SHIVAE_FULL_SCALE") != "1", reason="set SHIVAE_FULL_SCALE=1")
def test_criterion_1_synthetic_full(tmp_path_factory):
    out = tmp_path_factory.mktemp("synthetic_full")
    run, secs = _run_synthetic("synthetic", out)
    ok, detail = _synthetic_verdict(run, out)
    record(1, ok, f"full N=1000 T=100: {detail}; {secs / 60:.1f} min")
    assert ok, detail


# ---------------------------------------------------------------- 2. gradient check

def test_criterion_2_gradient_check():
    t0 = time.perf_counter()
    errs = gradient_check(n_params=150, step=1e-5)
    secs = time.perf_counter() - t0
    ok = len(errs) >= 100 and errs.max() < 1e-4 and secs < 60
    record(2, ok, f"{len(errs)} parameters, max relative error {errs.max():.2e}, {secs:.1f} s")
    assert ok


# ---------------------------------------------------------------- 3. ELBO oracle

def test_criterion_3_elbo_oracle():
    gap, lib, ref = elbo_oracle_gap()
    ok = gap < 1e-10
    record(3, ok, f"library {lib:.12f} vs hand-rolled {ref:.12f}, gap {gap:.1e}")
    assert ok


# ---------------------------------------------------------------- 4. metric oracles

def _instance(rng, discrete=False):
    rows = []
    for _ in range(int(rng.integers(1, 5))):
        T = int(rng.integers(2, 40))
        if discrete:
            x, xh = rng.integers(0, 4, size=(2, T)).astype(float)
        else:
            x = rng.normal(size=T) * rng.uniform(0.1, 10)
            xh = x + rng.normal(size=T)
        h = rng.random(T) < rng.uniform(0.1, 0.9)
        h[int(rng.integers(T))] = True
        rows.append((x, xh, h))
    return [list(c) for c in zip(*rows)]


def test_criterion_4_metric_oracles():
    rng = np.random.default_rng(2024)
    worst = {"nrmse": 0.0, "classification_error": 0.0, "burst_xcorr": 0.0, "phi": 0.0}
    for _ in range(100):
        x, xh, h = _instance(rng)
        worst["nrmse"] = max(worst["nrmse"], abs(nrmse(x, xh, h) - brute_nrmse(x, xh, h)))
        worst["phi"] = max(worst["phi"], abs(phi(x, xh, h) - brute_phi(x, xh, h)))
        xd, xhd, hd = _instance(rng, discrete=True)
        worst["classification_error"] = max(
            worst["classification_error"], abs(classification_error(xd, xhd, hd) - brute_class_error(xd, xhd, hd)))
        n = int(rng.integers(1, 20))
        w, wh = rng.normal(size=(2, n)) * rng.uniform(0.1, 10)
        worst["burst_xcorr"] = max(worst["burst_xcorr"], abs(burst_xcorr(w, wh) - brute_xcorr(list(w), list(wh))))
    ok = all(v < 1e-9 for v in worst.values())
    record(4, ok, "100 instances each, max abs gaps " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items()))
    assert ok


# ---------------------------------------------------------------- 5. mask protocol

def test_criterion_5_mask_protocol():
    ds = sample_hmm_dataset(HmmConfig(num_sequences=200, length=100, seed=5))
    notes, ok = [], True
    for rate in (0.10, 0.30, 0.50):
        suite = generate_mask_suite(ds, BurstSpec(target_rate=rate, num_masks=10, seed=int(rate * 100)))
        worst_rate, bad_len, n_runs = 0.0, 0, 0
        for rep in suite.masks:
            for seq, ov in zip(ds.sequences, rep):
                achieved = ov.sum(0) / seq.mask.sum(0)
                worst_rate = max(worst_rate, float(np.abs(achieved - rate).max()))
                for d in range(ds.D):
                    for start, length in run_lengths(ov[:, d]):
                        if start + length < seq.length:
                            n_runs += 1
                            bad_len += not 3 <= length <= 10
        ok &= len(suite) == 10 and worst_rate <= 0.02 + 1e-12 and bad_len == 0
        notes.append(f"rate {rate:.2f}: worst per-attribute deviation {worst_rate:.3f}, "
                     f"{bad_len}/{n_runs} runs outside [3,10]")
    record(5, ok, "10 replicates each; " + "; ".join(notes))
    assert ok


# ---------------------------------------------------------------- 6. invariant suite

def _invariants():
    rng = np.random.default_rng(6)
    out = {}

    # KL non-negativity
    mq, mp = rng.normal(size=(2, 1000, 3)) * 3
    vq, vp = np.exp(rng.normal(size=(2, 1000, 3)) * 2)
    kl = kl_gaussian_diag(Gaussian(torch.as_tensor(mq), torch.as_tensor(vq)),
                          Gaussian(torch.as_tensor(mp), torch.as_tensor(vp)))
    kls = kl_categorical(torch.log_softmax(torch.as_tensor(rng.normal(size=(1000, 5)) * 5), -1))
    out["kl_nonnegative"] = bool((kl >= -1e-6).all() and (kls >= -1e-6).all())

    # likelihood-parameter validity on 1000 random inputs over 10 random nets
    valid = True
    with torch.no_grad():
        for rep in range(10):
            torch.manual_seed(rep)
            m = ShiVAE(MIXED, 2, 4, 3, hidden=6).double()
            for p in m.parameters():
                p.mul_(float(rng.uniform(1, 20)))
            B = 100
            y = torch.as_tensor(rng.normal(size=(B, 6)) * 10)
            s = torch.softmax(torch.as_tensor(rng.normal(size=(B, 3))), -1)
            h = torch.as_tensor(rng.uniform(-1, 1, size=(B, 4)))
            lp = m.decode_step(y, s, h)
            valid &= bool((lp[0]["var"] > 0).all() and (lp[1]["var"] > 0).all())
            valid &= bool(((lp[2]["p"] > 0) & (lp[2]["p"] < 1)).all())
            valid &= bool(((lp[3]["log_probs"].exp().sum(-1) - 1).abs() <= 1e-6).all())
    out["parameter_validity"] = valid

    # loss invariance to hidden-cell values, 1000 perturbations
    torch.manual_seed(0)
    m = ShiVAE(MIXED, 2, 4, 3, hidden=8).double()
    ds = random_dataset(rng, MIXED, n=4, lengths=(6, 6), missing=0.4)
    ts = fit_transform_state(random_dataset(rng, MIXED, n=10, missing=0.0))
    b = collate([apply(ts, s) for s in ds.sequences])
    noise = (torch.as_tensor(-np.log(-np.log(rng.random((4, 6, 3))))), torch.as_tensor(rng.normal(size=(4, 6, 2))))
    hidden = ~torch.repeat_interleave(b.attr_mask, torch.tensor(m.widths), dim=-1)
    with torch.no_grad():
        base = m.elbo(b.x, b.attr_mask, noise=noise).total.item()
        same = all(m.elbo(torch.where(hidden, torch.as_tensor(rng.normal(size=b.x.shape) * 1e3), b.x),
                          b.attr_mask, noise=noise).total.item() == base for _ in range(1000))
    out["hidden_value_invariance"] = same

    # padded steps contribute nothing, 1000 random padded tails
    zero_pad = True
    with torch.no_grad():
        valid_mask = torch.ones(4, 6, dtype=torch.bool)
        ref = m.elbo(b.x, b.attr_mask, valid_mask, noise=noise).total.item()
        for _ in range(1000):
            k = int(rng.integers(1, 4))
            x = torch.cat([b.x, torch.as_tensor(rng.normal(size=(4, k, b.x.shape[-1])) * 50)], 1)
            am = torch.cat([b.attr_mask, torch.zeros(4, k, 4, dtype=torch.bool)], 1)
            v = torch.cat([valid_mask, torch.zeros(4, k, dtype=torch.bool)], 1)
            nz = tuple(torch.cat([n, torch.as_tensor(rng.normal(size=(4, k, n.shape[-1])))], 1) for n in noise)
            zero_pad &= abs(m.elbo(x, am, v, noise=nz).total.item() - ref) <= 1e-12
    out["padding_zero_contribution"] = zero_pad

    # temporal causality probe, 1000 perturbations of the future
    causal = True
    full = collate([apply(ts, s) for s in random_dataset(rng, MIXED, n=2, lengths=(8, 8), missing=0.0).sequences])
    nz = (torch.as_tensor(-np.log(-np.log(rng.random((2, 8, 3))))), torch.as_tensor(rng.normal(size=(2, 8, 2))))
    with torch.no_grad():
        ref = m.run(full.x, full.attr_mask, noise=nz)
        for _ in range(1000):
            k = int(rng.integers(1, 8))
            x = full.x.clone()
            x[:, k:, :2] = torch.as_tensor(rng.normal(size=(2, 8 - k, 2)) * 5)
            got = m.run(x, full.attr_mask, noise=nz)
            causal &= all(torch.equal(got[key][:, :k], ref[key][:, :k]) for key in ("recon", "kl_z", "kl_s"))
    out["temporal_causality"] = causal

    # observed-cell preservation under every imputer, 1000 sequences
    hmm = sample_hmm_dataset(HmmConfig(num_sequences=40, length=20, seed=1))
    cp = train(hmm, None, TrainConfig(epochs=2, annealing_epochs=1, batch_size=16, hidden=8, seed=0))
    seqs, overlays = [], []
    for i in range(1000):
        T = int(rng.integers(3, 15))
        s = random_dataset(rng, MIXED, n=1, lengths=(T, T), missing=0.2).sequences[0]
        seqs.append(Sequence(f"r{i}", s.values, s.mask))
        overlays.append((rng.random(s.mask.shape) < 0.3) & s.mask)
    big = HeterogeneousDataset(hmm.schema, seqs)
    outs = [[r.sequence for r in impute_dataset(big, overlays, cp, n_samples=2, seed=0)],
            impute_baseline("mean", big, overlays, hmm), impute_baseline("locf", big, overlays, hmm)]
    out["observed_preservation"] = all(
        np.array_equal(c.values[s.mask & ~ov], s.values[s.mask & ~ov])
        for completed in outs for s, ov, c in zip(seqs, overlays, completed))
    return out


def test_criterion_6_invariants():
    checks = _invariants()
    ok = all(checks.values())
    record(6, ok, ", ".join(f"{k} {'ok' if v else 'VIOLATED'}" for k, v in checks.items()))
    assert ok, checks


# ---------------------------------------------------------------- 7. determinism

DETERMINISM_CONFIG = {"preset": "synthetic-desk", "seed": 21,
                      "data": {"hmm": {"num_sequences": 60, "length": 30}},
                      "mask": {"num_masks": 3}, "train": {"epochs": 5, "annealing_epochs": 2, "batch_size": 16},
                      "impute": {"samples": 4}}


def test_criterion_7_determinism(tmp_path):
    a = run_pipeline(DETERMINISM_CONFIG, tmp_path / "a")
    b = run_pipeline(DETERMINISM_CONFIG, tmp_path / "b")
    gaps = []
    for m in a["results"]:
        for key in ("error", "cross_corr"):
            for x, y in zip(a["results"][m][key]["replicates"], b["results"][m][key]["replicates"]):
                gaps.append(abs(x - y))
    same_files = ({x["path"]: x["sha256"] for x in a["artifacts"]}
                  == {x["path"]: x["sha256"] for x in b["artifacts"]})
    ok = max(gaps) <= 1e-6 and same_files
    record(7, ok, f"reduced pipeline (N=60, T=30, 3 masks, 5 epochs) rerun: max metric gap {max(gaps):.1e}, "
                  f"artifact checksums {'identical' if same_files else 'differ'}")
    assert ok


# ---------------------------------------------------------------- 8. private datasets

def test_criterion_8_physionet_format_end_to_end(tmp_path):
    """The published Physionet and human-monitoring numbers need licence-gated or
    private data and are documented, not reproduced. What is checked: the
    Physionet-format loader runs end to end on a schema-compatible stand-in
    and the report carries both metrics."""
    standin = physionet_standin(num_patients=45, native_rate=0.3, seed=8)
    write_physionet_format(standin, tmp_path / "patients")
    cfg = get_preset("physionet")
    cfg["data"]["dir"] = str(tmp_path / "patients")
    cfg["mask"]["num_masks"] = 2
    cfg["train"].update(epochs=3, annealing_epochs=2)
    cfg["impute"]["samples"] = 3
    run = run_pipeline(cfg, tmp_path / "run", preset="physionet")
    res = run["results"]["shivae"]
    ok = (run["status"] == "complete" and all(math.isfinite(res[k]["mean"]) for k in ("error", "cross_corr"))
          and all(sha256_file(tmp_path / "run" / x["path"]) == x["sha256"] for x in run["artifacts"]))
    record(8, ok, f"Physionet-format stand-in (45 patients, D=35, T=48) ran end to end: error "
                  f"{res['error']['mean']:.4f}, cross-corr {res['cross_corr']['mean']:.3f}; published "
                  f"Physionet and human-monitoring figures not reproducible without the data")
    assert ok
