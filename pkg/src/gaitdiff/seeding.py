"""Independent, named random streams derived from one integer seed."""
from __future__ import annotations

import numpy as np

STREAMS = {"data": 0, "init": 1, "training": 2, "sampling": 3}


def stream_seed(seed: int, name: str, *sub: int) -> np.random.SeedSequence:
    if name not in STREAMS:
        raise ValueError(f"unknown random stream {name!r}; expected one of {sorted(STREAMS)}")
    return np.random.SeedSequence(int(seed), spawn_key=(STREAMS[name],) + tuple(int(k) for k in sub))


def rng_for(seed: int, name: str, *sub: int) -> np.random.Generator:
    return np.random.default_rng(stream_seed(seed, name, *sub))


def int_seed(seed: int, name: str) -> int:
    """A 32-bit integer seed for APIs that take ints."""
    return int(stream_seed(seed, name).generate_state(1)[0])
