"""Named random substreams derived from one root seed."""

import zlib

import numpy as np

STREAMS = ("datagen", "mask", "split", "init", "training", "imputation")


def substream_seed(root: int, name: str, *extra: int) -> int:
    key = (zlib.crc32(name.encode()), *extra)
    return int(np.random.SeedSequence(root, spawn_key=key).generate_state(1, np.uint32)[0])


def substream_rng(root: int, name: str, *extra: int) -> np.random.Generator:
    return np.random.default_rng(substream_seed(root, name, *extra))
