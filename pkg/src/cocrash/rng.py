"""Seeded substreams.

Every random draw in the package comes from a Philox generator keyed by the
master seed plus a tuple naming its purpose, so a chunk of work produces the
same numbers no matter which worker runs it or in what order.
"""
import numpy as np

NULL_STREAM = 1
PERMUTATION_STREAM = 2
SIMULATION_STREAM = 3


def substream(seed: int, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def chunk_sizes(total: int, chunk: int) -> list[int]:
    full, rest = divmod(int(total), int(chunk))
    return [chunk] * full + ([rest] if rest else [])
