"""n-point motion of the mollified Brownian flow in one dimension.

Two Euler-Maruyama discretizations are provided:

``covariance`` mode
    steps the n-point diffusion with zero drift and matrix
    ``A(x)_ij = g_eps(x_i - x_j)`` through its symmetric PSD square root;

``field`` mode
    discretizes the Wiener sheet on cells of pitch ``eps * r / 8`` and pushes
    every particle with the same cell variates, which keeps the common-noise
    coupling of the flow.

Ensembles are simulated replica-blocked with per-replica seeded streams.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .kernel import CovarianceKernel, MollifierKernel, make_mollifier, phi_eps
from .replicas import (
    FLOW_STREAM,
    WIENER_STREAM,
    draw_chunk,
    map_blocks,
    replica_rng,
)

MODES = ("covariance", "field")
_CHUNK_STEPS = 256


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class FlowState:
    """Positions of tagged particles at time ``t``.

    ``positions`` may carry leading batch axes; the last axis indexes tags.
    """

    t: float
    positions: np.ndarray
    starts: np.ndarray


@dataclass(frozen=True)
class FlowPath:
    times: np.ndarray
    positions: np.ndarray  # (M + 1, n)
    mode: str
    crossings: int = 0

    @property
    def step(self) -> float:
        return float(self.times[1] - self.times[0])


@dataclass(frozen=True)
class SimConfig:
    eps: float
    starts: tuple[float, ...]
    h: float = 1e-3
    steps: int = 1000
    replicas: int = 1000
    seed: int = 0
    mode: str = "covariance"
    radius: float = 1.0
    record_every: int = 1

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        if not self.h > 0:
            raise ValueError(f"step must be positive, got {self.h}")
        if self.steps < 1 or self.replicas < 1:
            raise ValueError("steps and replicas must be at least 1")
        u = np.asarray(self.starts, dtype=float)
        if u.ndim != 1 or u.size < 1 or not np.all(np.isfinite(u)):
            raise ValueError("starts must be a nonempty list of finite numbers")
        if np.any(np.diff(u) <= 0):
            raise ValueError("starts must be strictly increasing")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.record_every < 1 or self.steps % self.record_every:
            raise ValueError("record_every must divide the number of steps")

    @property
    def n(self) -> int:
        return len(self.starts)


@dataclass(frozen=True)
class NoiseField:
    """Cell discretization of the Wiener sheet.

    Cells are the lattice ``[k dq, (k + 1) dq)`` with midpoints ``q_k``.
    Each particle reads the ``span`` consecutive cells starting at
    ``first_cell(x)``, which cover its support ``|x - q| < eps r``. Only cells
    touched by some particle are drawn; particles whose windows overlap read
    the same variates.
    """

    eps: float
    radius: float = 1.0
    pitch: float = field(default=0.0)

    def __post_init__(self):
        if self.pitch == 0.0:
            object.__setattr__(self, "pitch", self.eps * self.radius / 8.0)
        if self.pitch > self.eps * self.radius / 8.0 * (1 + 1e-12):
            raise ValueError("cell pitch must not exceed eps * r / 8")

    @property
    def half_width(self) -> float:
        return self.eps * self.radius

    @property
    def span(self) -> int:
        return int(math.ceil(2.0 * self.half_width / self.pitch)) + 2

    def first_cell(self, x: np.ndarray) -> np.ndarray:
        return np.floor((x - self.half_width) / self.pitch).astype(np.int64)

    def weights(self, k: MollifierKernel, x: np.ndarray, first: np.ndarray) -> np.ndarray:
        """``phi_eps(x - q)`` for every particle and each cell of its window."""
        cells = first[..., None] + np.arange(self.span)
        q = (cells + 0.5) * self.pitch
        return phi_eps(k, self.eps, x[..., None] - q)

    def window(self, x: np.ndarray, h: float) -> tuple[float, float]:
        margin = 6.0 * math.sqrt(h)
        return (float(np.min(x)) - self.half_width - margin,
                float(np.max(x)) + self.half_width + margin)


def _sqrt_psd_increment(a: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """``L xi`` with ``L`` the symmetric PSD square root of each ``a``."""
    n = a.shape[-1]
    floor = -1e-9 * n
    if n == 1:
        return xi
    if n == 2:
        # eigenpairs of [[1, g], [g, 1]]: 1 +- g along (1, +-1) / sqrt 2
        g = a[..., 0, 1]
        lam_minus = 1.0 - g
        if np.any(lam_minus < floor) or np.any(1.0 + g < floor):
            raise SimulationError("diffusion matrix is not positive semidefinite")
        sp = np.sqrt(np.maximum(1.0 + g, 0.0))
        sm = np.sqrt(np.maximum(lam_minus, 0.0))
        diag = 0.5 * (sp + sm)
        off = 0.5 * (sp - sm)
        return np.stack([diag * xi[..., 0] + off * xi[..., 1],
                         off * xi[..., 0] + diag * xi[..., 1]], axis=-1)
    try:
        w, v = np.linalg.eigh(a)
    except np.linalg.LinAlgError as exc:
        raise SimulationError(f"eigendecomposition failed: {exc}") from exc
    if np.any(w < floor):
        raise SimulationError(
            f"diffusion matrix is not positive semidefinite (min eigenvalue {w.min():.3g})"
        )
    root = (v * np.sqrt(np.maximum(w, 0.0))[..., None, :]) @ np.swapaxes(v, -1, -2)
    return np.einsum("...ij,...j->...i", root, xi)


def _pair_matrix(ck: CovarianceKernel, x: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    a = np.empty(x.shape + (n,))
    iu, ju = np.triu_indices(n, 1)
    g = ck(x[..., iu] - x[..., ju])
    a[..., iu, ju] = g
    a[..., ju, iu] = g
    idx = np.arange(n)
    a[..., idx, idx] = 1.0
    return a


def _covariance_increment(ck: CovarianceKernel, x: np.ndarray, xi: np.ndarray, h: float):
    if x.shape[-1] == 1:
        return math.sqrt(h) * xi
    return math.sqrt(h) * _sqrt_psd_increment(_pair_matrix(ck, x), xi)


def _shared_cells(first: np.ndarray, z: np.ndarray, span: int) -> np.ndarray:
    """Make overlapping particle windows read identical cell variates.

    ``first`` has shape (..., n), ``z`` shape (..., n, span) with row ``j``
    the fresh variates of the ``j``-th particle from the left. Particles are
    visited in position order; windows have equal length, so any cell a
    particle shares with an earlier one is also in its left neighbour's window.
    """
    n = first.shape[-1]
    if n == 1:
        return z
    # raw variates belong to position ranks, not tags, so relabeling the
    # particles leaves the noise they feel unchanged
    order = np.argsort(first, axis=-1, kind="stable")
    k = np.take_along_axis(first, order, axis=-1)
    zs = z.copy()
    lanes = np.arange(span)
    for j in range(1, n):
        offset = (k[..., j] - k[..., j - 1])[..., None] + lanes
        shared = offset < span
        src = np.take_along_axis(zs[..., j - 1, :], np.minimum(offset, span - 1), axis=-1)
        zs[..., j, :] = np.where(shared, src, zs[..., j, :])
    out = np.empty_like(z)
    np.put_along_axis(out, order[..., None], zs, axis=-2)
    return out


def _field_increment(k: MollifierKernel, nf: NoiseField, x: np.ndarray, z: np.ndarray, h: float):
    first = nf.first_cell(x)
    z = _shared_cells(first, z, nf.span)
    w = nf.weights(k, x, first)
    return math.sqrt(nf.pitch * h) * np.einsum("...k,...k->...", w, z)


def step_covariance(s: FlowState, h: float, rng: np.random.Generator, ck: CovarianceKernel) -> FlowState:
    """One Euler-Maruyama step ``x <- x + sqrt(A(x)) xi sqrt(h)``."""
    if not h > 0:
        raise ValueError("step must be positive")
    x = np.asarray(s.positions, dtype=float)
    xi = rng.standard_normal(x.shape)
    return FlowState(s.t + h, x + _covariance_increment(ck, x, xi, h), s.starts)


def step_field(s: FlowState, h: float, nf: NoiseField, rng: np.random.Generator,
               k: MollifierKernel | None = None) -> FlowState:
    """One step ``x_i <- x_i + sum_k phi_eps(x_i - q_k) xi_k sqrt(dq h)``."""
    if not h > 0:
        raise ValueError("step must be positive")
    k = k or make_mollifier(1, nf.radius)
    x = np.asarray(s.positions, dtype=float)
    if not np.all(np.isfinite(x)):
        raise SimulationError("cannot place a noise window around non-finite positions")
    z = rng.standard_normal(x.shape + (nf.span,))
    return FlowState(s.t + h, x + _field_increment(k, nf, x, z, h), s.starts)


@dataclass(frozen=True)
class FlowEnsemble:
    """R replica paths on a shared recorded time grid.

    ``paths`` has shape (R, len(times), n); ``crossings`` counts, per
    replica, the steps at which a pair adjacent in start order swaps order.
    """

    times: np.ndarray
    paths: np.ndarray
    starts: np.ndarray
    eps: float
    h: float
    mode: str
    crossings: np.ndarray
    seed: int

    @property
    def replicas(self) -> int:
        return self.paths.shape[0]

    @property
    def n(self) -> int:
        return self.paths.shape[2]

    @property
    def steps(self) -> int:
        return int(round(self.times[-1] / self.h))

    def path(self, r: int) -> FlowPath:
        return FlowPath(self.times, self.paths[r], self.mode, int(self.crossings[r]))

    def at(self, t: float) -> np.ndarray:
        """Positions (R, n) at a recorded time."""
        return self.paths[:, _time_index(self.times, t), :]

    def crossing_rate(self) -> float:
        pairs = max(self.n - 1, 1)
        return float(self.crossings.sum()) / (self.replicas * self.steps * pairs)


def _time_index(times: np.ndarray, t: float) -> int:
    i = int(np.argmin(np.abs(times - t)))
    if abs(times[i] - t) > 1e-9 * max(1.0, abs(t)):
        raise ValueError(f"time {t} is not on the recorded grid")
    return i


def _pair_signs(x: np.ndarray, order: np.ndarray) -> np.ndarray:
    xs = x[:, order]
    return xs[:, 1:] < xs[:, :-1]


def _flow_block(lo, hi, *, starts, eps, radius, h, steps, mode, seed, record_every, stream):
    gens = [replica_rng(seed, stream, i) for i in range(lo, hi)]
    n = starts.size
    b = hi - lo
    k = make_mollifier(1, radius)
    ck = CovarianceKernel(k, eps) if mode == "covariance" else None
    nf = NoiseField(eps, radius) if mode == "field" else None
    order = np.argsort(starts, kind="stable")

    x = np.tile(starts, (b, 1))
    rec = np.empty((b, steps // record_every + 1, n))
    rec[:, 0] = x
    crossings = np.zeros(b, dtype=np.int64)
    inverted = _pair_signs(x, order)
    done = 0
    while done < steps:
        chunk = min(_CHUNK_STEPS, steps - done)
        if mode == "field":
            noise = draw_chunk(gens, (chunk, n, nf.span))
        else:
            noise = draw_chunk(gens, (chunk, n))
        for c in range(chunk):
            if mode == "covariance":
                x = x + _covariance_increment(ck, x, noise[c], h)
            elif mode == "field":
                x = x + _field_increment(k, nf, x, noise[c], h)
            else:  # independent Brownian bundle
                x = x + math.sqrt(h) * noise[c]
            done += 1
            if n > 1:
                now = _pair_signs(x, order)
                crossings += np.count_nonzero(now != inverted, axis=1)
                inverted = now
            if done % record_every == 0:
                rec[:, done // record_every] = x
        if not np.all(np.isfinite(x)):
            raise SimulationError("non-finite positions encountered")
    return rec, crossings


def _ensemble(starts, eps, h, steps, replicas, seed, mode, radius, record_every, workers, stream):
    starts = np.asarray(starts, dtype=float)
    parts = map_blocks(
        _flow_block, replicas, workers,
        starts=starts, eps=eps, radius=radius, h=h, steps=steps, mode=mode,
        seed=seed, record_every=record_every, stream=stream,
    )
    paths = np.concatenate([p[0] for p in parts])
    crossings = np.concatenate([p[1] for p in parts])
    times = h * np.arange(0, steps + 1, record_every)
    return FlowEnsemble(times, paths, starts, eps, h, mode, crossings, seed)


def simulate_flow(cfg: SimConfig, workers: int = 1) -> FlowEnsemble:
    """Simulate ``cfg.replicas`` independent paths of the n-point flow."""
    return simulate_paths(cfg.starts, cfg.eps, cfg.h, cfg.steps, cfg.replicas, cfg.seed,
                          cfg.mode, cfg.radius, cfg.record_every, workers)


def simulate_paths(starts, eps: float, h: float, steps: int, replicas: int, seed: int,
                   mode: str = "covariance", radius: float = 1.0, record_every: int = 1,
                   workers: int = 1) -> FlowEnsemble:
    """Flow ensemble from arbitrary distinct starts (any tag order)."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if steps % record_every:
        raise ValueError("record_every must divide the number of steps")
    return _ensemble(starts, eps, h, steps, replicas, seed, mode, radius, record_every,
                     workers, FLOW_STREAM)


def simulate_wiener(starts, h: float, steps: int, replicas: int, seed: int,
                    record_every: int = 1, workers: int = 1) -> FlowEnsemble:
    """Independent standard Brownian motions on the same grid as the flow."""
    return _ensemble(starts, float("nan"), h, steps, replicas, seed, "wiener", 1.0,
                     record_every, workers, WIENER_STREAM)


def min_gaps(paths: np.ndarray) -> np.ndarray:
    """Smallest pairwise distance at every recorded time, shape (..., T)."""
    if paths.shape[-1] < 2:
        return np.full(paths.shape[:-1], np.inf)
    return np.diff(np.sort(paths, axis=-1), axis=-1).min(axis=-1)


def exit_indices(paths: np.ndarray, threshold: float) -> np.ndarray:
    """Per replica, the first grid index with min gap <= threshold, else -1."""
    hit = min_gaps(paths) <= threshold
    first = np.argmax(hit, axis=-1)
    return np.where(hit.any(axis=-1), first, -1)


def first_exit_time(p: FlowPath, eps: float, r: float = 1.0) -> float | None:
    """First grid time at which some gap is ``<= 2 eps r``; ``None`` if never."""
    i = int(exit_indices(p.positions, 2.0 * eps * r))
    return None if i < 0 else float(p.times[i])


def stopped_values(ens: FlowEnsemble, threshold: float) -> np.ndarray:
    """Positions at ``tau ^ T`` (R, n), tau the first exit from the gap set."""
    idx = exit_indices(ens.paths, threshold)
    idx = np.where(idx < 0, ens.paths.shape[1] - 1, idx)
    return ens.paths[np.arange(ens.replicas), idx]
