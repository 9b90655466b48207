"""Named seed streams: every source of randomness (corpus, selection,
dropout, diffusion, distill, ...) draws from its own generator derived from
the run seed and a stable stream name, and the derivation is logged."""

from __future__ import annotations

import zlib

import numpy as np

STREAMS = ("corpus", "selection", "dropout", "diffusion", "distill", "sr", "eval")


def seed_stream(root_seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng([int(root_seed), zlib.crc32(name.encode())])


def stream_table(root_seed: int) -> dict:
    return {name: [int(root_seed), zlib.crc32(name.encode())] for name in STREAMS}
