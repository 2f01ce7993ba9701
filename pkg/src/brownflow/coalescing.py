"""Coalescing Brownian motion of finitely many particles in one dimension.

Particles move as independent standard Brownian motions until they meet and
move together afterwards. On a grid of step ``h`` a meeting between grid
times is detected exactly in distribution: conditional on the endpoints,
the gap of two independent Brownian motions is a Brownian bridge with
variance parameter 2, which touches zero with probability
``exp(-gap0 * gap1 / h)``.

With sorted starts blocks stay contiguous in tag order, so the whole
partition process is encoded by the step at which each boundary between
tags ``i`` and ``i + 1`` closes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .replicas import COALESCE_STREAM, draw_chunk, map_blocks, replica_rng

_CHUNK_STEPS = 256
OPEN = -1


@dataclass(frozen=True)
class PartitionProcess:
    """Merge history as ``(time, partition)`` pairs, coarsening in time."""

    events: tuple[tuple[float, tuple[tuple[int, ...], ...]], ...]

    def at(self, t: float) -> tuple[tuple[int, ...], ...]:
        current = self.events[0][1]
        for time, part in self.events:
            if time <= t:
                current = part
        return current

    @classmethod
    def from_boundaries(cls, merge_steps: np.ndarray, h: float) -> PartitionProcess:
        n = merge_steps.size + 1
        closed = np.zeros(n - 1, dtype=bool)
        times = sorted({int(s) for s in merge_steps if s > 0})
        closed[:] = merge_steps == 0
        events = [(0.0, _blocks(closed))]
        for s in times:
            closed |= merge_steps == s
            events.append((s * h, _blocks(closed)))
        return cls(tuple(events))


def _blocks(closed: np.ndarray) -> tuple[tuple[int, ...], ...]:
    blocks, cur = [], [0]
    for i, c in enumerate(closed):
        if c:
            cur.append(i + 1)
        else:
            blocks.append(tuple(cur))
            cur = [i + 1]
    blocks.append(tuple(cur))
    return tuple(blocks)


@dataclass(frozen=True)
class CoalescingPath:
    times: np.ndarray
    positions: np.ndarray  # (M + 1, n)
    partition: PartitionProcess


@dataclass(frozen=True)
class CoalescingEnsemble:
    """R replicas; ``merge_steps[r, i]`` is the step at which tags i, i+1 joined (-1: never)."""

    times: np.ndarray
    paths: np.ndarray
    starts: np.ndarray
    h: float
    merge_steps: np.ndarray
    bridge: bool
    seed: int

    @property
    def replicas(self) -> int:
        return self.paths.shape[0]

    @property
    def n(self) -> int:
        return self.paths.shape[2]

    def path(self, r: int) -> CoalescingPath:
        return CoalescingPath(self.times, self.paths[r],
                              PartitionProcess.from_boundaries(self.merge_steps[r], self.h))

    def at(self, t: float) -> np.ndarray:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"time {t} is not on the recorded grid")
        return self.paths[:, i, :]

    def merged_by(self, i: int, j: int, step: int) -> np.ndarray:
        """Whether tags i < j share a block at the given step, per replica."""
        lo, hi = sorted((i, j))
        ms = self.merge_steps[:, lo:hi]
        return np.all((ms >= 0) & (ms <= step), axis=1)

    def block_counts(self) -> np.ndarray:
        """Number of blocks at each recorded time, shape (R, T)."""
        rec_steps = np.rint(self.times / self.h).astype(np.int64)
        ms = self.merge_steps[:, None, :]
        closed = (ms >= 0) & (ms <= rec_steps[None, :, None])
        return self.n - closed.sum(axis=2)


def bridge_merge_probability(gap0, gap1, h: float):
    """Probability that two independent Brownian motions meet within a step.

    ``gap0`` and ``gap1`` are the gaps at the two ends of a step of length
    ``h``; the gap process has variance 2 per unit time.
    """
    gap0 = np.asarray(gap0, dtype=float)
    gap1 = np.asarray(gap1, dtype=float)
    if np.any(gap0 <= 0) or np.any(gap1 <= 0):
        raise ValueError("gaps must be positive; touching pairs are merged already")
    if not h > 0:
        raise ValueError("step must be positive")
    p = np.exp(-gap0 * gap1 / h)
    return float(p) if p.ndim == 0 else p


def _merge(x, leader, merge_steps, fire, i, step):
    rows = np.flatnonzero(fire)
    lead_l = leader[rows, i][:, None]
    lead_r = leader[rows, i + 1][:, None]
    mid = 0.5 * (x[rows, i] + x[rows, i + 1])
    sub_leader = leader[rows]
    members = (sub_leader == lead_l) | (sub_leader == lead_r)
    x[rows] = np.where(members, mid[:, None], x[rows])
    leader[rows] = np.where(sub_leader == lead_r, lead_l, sub_leader)
    merge_steps[rows, i] = step


def _advance(x, leader, merge_steps, xi, u, h, step, bridge):
    """One grid step of the coalescing system, in place."""
    b, n = x.shape
    rows = np.arange(b)[:, None]
    x_prev = x.copy()
    x += math.sqrt(h) * xi[rows, leader]
    for i in range(n - 1):
        open_ = merge_steps[:, i] == OPEN
        if not open_.any():
            continue
        gap1 = x[:, i + 1] - x[:, i]
        fire = open_ & (gap1 <= 0)
        if bridge:
            gap0 = x_prev[:, i + 1] - x_prev[:, i]
            with np.errstate(over="ignore"):
                p = np.exp(-np.clip(gap0, 0, None) * np.clip(gap1, 0, None) / h)
            fire |= open_ & (u[:, i] < p)
        if fire.any():
            _merge(x, leader, merge_steps, fire, i, step)
    # a merge on an inverted pair moves the left block leftwards; re-sweep
    while n > 1:
        inverted = (merge_steps == OPEN) & (x[:, 1:] < x[:, :-1])
        if not inverted.any():
            break
        i = int(np.argmax(inverted.any(axis=0)))
        _merge(x, leader, merge_steps, inverted[:, i], i, step)


def _coalesce_block(lo, hi, *, starts, h, steps, seed, bridge, record_every):
    gens = [replica_rng(seed, COALESCE_STREAM, i) for i in range(lo, hi)]
    n = starts.size
    b = hi - lo
    x = np.tile(starts, (b, 1))
    leader = np.tile(np.arange(n), (b, 1))
    merge_steps = np.full((b, max(n - 1, 0)), OPEN, dtype=np.int64)
    for i in range(n - 1):
        if starts[i + 1] == starts[i]:
            leader[leader == leader[0, i + 1]] = leader[0, i]
            merge_steps[:, i] = 0
    rec = np.empty((b, steps // record_every + 1, n))
    rec[:, 0] = x
    done = 0
    while done < steps:
        chunk = min(_CHUNK_STEPS, steps - done)
        xi = draw_chunk(gens, (chunk, n))
        u = draw_chunk(gens, (chunk, max(n - 1, 1)), kind="uniform")
        for c in range(chunk):
            done += 1
            _advance(x, leader, merge_steps, xi[c], u[c], h, done, bridge)
            if done % record_every == 0:
                rec[:, done // record_every] = x
    return rec, merge_steps


def simulate_coalescing_ensemble(starts, h: float, steps: int, replicas: int, seed: int,
                                 bridge: bool = True, record_every: int = 1,
                                 workers: int = 1) -> CoalescingEnsemble:
    """Simulate ``replicas`` independent coalescing systems from sorted starts.

    Each step draws one normal per tag and one uniform per tag boundary; a
    block moves with the normal of its leftmost tag. A pair merges when its
    order inverts or when its bridge draw fires; the merged block continues
    from the midpoint of the two block positions.
    """
    starts = np.asarray(starts, dtype=float)
    if starts.ndim != 1 or starts.size < 1:
        raise ValueError("need at least one start point")
    if np.any(np.diff(starts) < 0):
        raise ValueError("starts must be sorted")
    if not h > 0 or steps < 1 or replicas < 1:
        raise ValueError("need h > 0, steps >= 1, replicas >= 1")
    if steps % record_every:
        raise ValueError("record_every must divide the number of steps")
    parts = map_blocks(_coalesce_block, replicas, workers, starts=starts, h=h, steps=steps,
                       seed=seed, bridge=bridge, record_every=record_every)
    paths = np.concatenate([p[0] for p in parts])
    merge_steps = np.concatenate([p[1] for p in parts])
    times = h * np.arange(0, steps + 1, record_every)
    return CoalescingEnsemble(times, paths, starts, h, merge_steps, bridge, seed)


def simulate_coalescing(starts, h: float, steps: int, rng: np.random.Generator,
                        bridge: bool = True) -> CoalescingPath:
    """Single coalescing path driven by the given generator."""
    starts = np.asarray(starts, dtype=float)
    if np.any(np.diff(starts) < 0):
        raise ValueError("starts must be sorted")
    n = starts.size
    x = starts[None, :].copy()
    leader = np.arange(n)[None, :]
    merge_steps = np.full((1, max(n - 1, 0)), OPEN, dtype=np.int64)
    for i in range(n - 1):
        if starts[i + 1] == starts[i]:
            leader[leader == leader[0, i + 1]] = leader[0, i]
            merge_steps[:, i] = 0
    rec = np.empty((steps + 1, n))
    rec[0] = x[0]
    for m in range(1, steps + 1):
        xi = rng.standard_normal((1, n))
        u = rng.random((1, max(n - 1, 1)))
        _advance(x, leader, merge_steps, xi, u, h, m, bridge)
        rec[m] = x[0]
    times = h * np.arange(steps + 1)
    return CoalescingPath(times, rec, PartitionProcess.from_boundaries(merge_steps[0], h))


def kpoint_marginal(ens, tags, t: float) -> np.ndarray:
    """Joint sample (R, k) of the selected coordinates at a recorded time."""
    tags = list(tags)
    if any(not 0 <= i < ens.n for i in tags):
        raise IndexError(f"tags {tags} out of range for {ens.n} particles")
    return ens.at(t)[:, tags]
