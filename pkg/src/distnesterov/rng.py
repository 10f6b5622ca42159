"""Named, splittable random streams.

Every random draw in an experiment comes from a generator keyed by the
experiment seed plus a tuple of integers, so any stream can be rebuilt
without replaying the others.
"""
from __future__ import annotations

import numpy as np

Stream = np.random.Generator

# first element of the spawn key, one per consumer
GRAPH = 0
OBJECTIVE = 1
MU = 2
RUNS = 3
THEORY = 4


def stream(seed: int, *key: int) -> Stream:
    """Generator for ``(seed, *key)``; distinct keys give independent streams."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))))


def round_stream(seed: int, run_index: int, iteration: int) -> Stream:
    """Stream of the weight matrices of one (outer) iteration of one run.

    Row ``s`` of ``round_stream(...).random((rows, E))`` drives inner round
    ``s``; numpy fills arrays in C order, so row ``s`` does not depend on how
    many rows are drawn.
    """
    return stream(seed, RUNS, run_index, iteration)
