"""Keyed random substreams.

Every random draw in a run comes from a generator derived from
``(seed, *keys)`` so results do not depend on call order or worker count.
"""

from __future__ import annotations

import zlib

import numpy as np
import torch


def _key_int(key) -> int:
    if isinstance(key, str):
        # stable across interpreter runs, unlike hash()
        return zlib.crc32(key.encode()) + (1 << 40)
    return int(key)


def substream(seed: int, *keys) -> torch.Generator:
    state = np.random.SeedSequence([_key_int(seed), *(_key_int(k) for k in keys)]).generate_state(2)
    value = (int(state[0]) << 32 | int(state[1])) & ((1 << 63) - 1)
    return torch.Generator().manual_seed(value)
