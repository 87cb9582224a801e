import sys

import numpy as np
import pytest
import torch

from shivae.datamodel import AttributeSchema, HeterogeneousDataset, Sequence
from shivae.synthgen import HmmConfig, sample_hmm_dataset

MIXED = (AttributeSchema("r", "real"), AttributeSchema("p", "positive"),
         AttributeSchema("b", "binary"), AttributeSchema("c", "categorical", 3))


def random_sequence(rng, schema, T, sid="x", missing=0.2):
    cols = []
    for a in schema:
        if a.kind == "real":
            cols.append(rng.normal(size=T))
        elif a.kind == "positive":
            cols.append(np.exp(rng.normal(size=T)))
        elif a.kind == "binary":
            cols.append(rng.integers(0, 2, size=T).astype(float))
        else:
            cols.append(rng.integers(0, a.num_classes, size=T).astype(float))
    values = np.stack(cols, -1)
    mask = rng.random(values.shape) >= missing
    return Sequence(sid, np.where(mask, values, np.nan), mask)


def random_dataset(rng, schema=MIXED, n=6, lengths=(4, 9), missing=0.2):
    seqs = [random_sequence(rng, schema, int(rng.integers(lengths[0], lengths[1] + 1)), f"q{i}", missing)
            for i in range(n)]
    return HeterogeneousDataset(schema, seqs)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def mixed_schema():
    return MIXED


@pytest.fixture(scope="session")
def small_hmm():
    return sample_hmm_dataset(HmmConfig(num_sequences=40, length=25, seed=3))


@pytest.fixture(autouse=True)
def _torch_seed():
    torch.manual_seed(0)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
