"""Named random streams derived from one root seed."""

from __future__ import annotations

import zlib

import numpy as np
import torch


def stream_key(name: str) -> int:
    return zlib.crc32(name.encode())


def numpy_stream(seed: int, name: str, *extra: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), stream_key(name), *map(int, extra)])


def torch_seed(seed: int, name: str, *extra: int) -> int:
    ss = np.random.SeedSequence([int(seed), stream_key(name), *map(int, extra)])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> 1)


def seed_torch(seed: int, name: str, *extra: int) -> None:
    torch.manual_seed(torch_seed(seed, name, *extra))


def enable_determinism() -> None:
    torch.use_deterministic_algorithms(True)
