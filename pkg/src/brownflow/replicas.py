"""Seeded per-replica random streams and block-parallel execution.

Every replica owns a private generator derived from ``(seed, stream, index)``.
Replicas are simulated in fixed-size blocks, so neither the worker count
nor the scheduling order can change a single bit of the output.
"""
from __future__ import annotations

import hashlib
from concurrent.futures import ProcessPoolExecutor

import numpy as np

BLOCK_SIZE = 1024

# stream tags keep different simulators on disjoint random streams
FLOW_STREAM = 1
COALESCE_STREAM = 2
WIENER_STREAM = 3
CHECK_STREAM = 4


def replica_rng(seed: int, stream: int, index: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream), int(index)))
    return np.random.Generator(np.random.PCG64(ss))


def check_rng(seed: int, label: str) -> np.random.Generator:
    """Generator for a named statistical check (permutations, subsamples)."""
    key = int.from_bytes(hashlib.blake2b(label.encode(), digest_size=8).digest(), "little")
    return replica_rng(seed, CHECK_STREAM, key)


def block_ranges(replicas: int, block: int = BLOCK_SIZE) -> list[tuple[int, int]]:
    return [(lo, min(lo + block, replicas)) for lo in range(0, replicas, block)]


def draw_chunk(gens, shape: tuple[int, ...], kind: str = "normal") -> np.ndarray:
    """Stack one draw of ``shape`` from each generator along axis 1.

    Consuming a generator in consecutive chunks yields the same numbers as
    one long draw, so chunk length is free to vary.
    """
    if kind == "normal":
        parts = [g.standard_normal(shape) for g in gens]
    else:
        parts = [g.random(shape) for g in gens]
    return np.stack(parts, axis=1)


def map_blocks(func, replicas: int, workers: int = 1, **kwargs) -> list:
    """Run ``func(lo, hi, **kwargs)`` over replica blocks, results in block order."""
    ranges = block_ranges(replicas)
    if workers <= 1 or len(ranges) == 1:
        return [func(lo, hi, **kwargs) for lo, hi in ranges]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(func, lo, hi, **kwargs) for lo, hi in ranges]
        return [f.result() for f in futures]
