"""Monte Carlo error bars and two-sample discrepancies."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

N_BATCHES = 20
N_PERMUTATIONS = 199
_ROW_CHUNK = 512


def batch_mean_se(values, batches: int = N_BATCHES) -> tuple[float, float]:
    """Mean and standard error from the spread of ``batches`` contiguous batch means."""
    v = np.asarray(values, dtype=float)
    if v.ndim != 1 or v.size < batches:
        raise ValueError(f"need at least {batches} values for batched standard errors")
    means = np.array([b.mean() for b in np.array_split(v, batches)])
    return float(v.mean()), float(means.std(ddof=1) / np.sqrt(batches))


def _as_cloud(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("samples must be a nonempty (N,) or (N, k) array")
    return x


def _pair_sum(a: np.ndarray, b: np.ndarray) -> float:
    total = 0.0
    for lo in range(0, a.shape[0], _ROW_CHUNK):
        total += cdist(a[lo:lo + _ROW_CHUNK], b).sum()
    return total


def energy_distance(a, b) -> float:
    """``2 E|A - B| - E|A - A'| - E|B - B'|`` over all sample pairs (V-statistic)."""
    a, b = _as_cloud(a), _as_cloud(b)
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    na, nb = a.shape[0], b.shape[0]
    return (2.0 * _pair_sum(a, b) / (na * nb)
            - _pair_sum(a, a) / na**2 - _pair_sum(b, b) / nb**2)


def energy_distance_se(a, b, batches: int = N_BATCHES) -> tuple[float, float]:
    """Full-sample energy distance and the batch-spread standard error."""
    a, b = _as_cloud(a), _as_cloud(b)
    est = energy_distance(a, b)
    parts = [energy_distance(x, y) for x, y in
             zip(np.array_split(a, batches), np.array_split(b, batches))]
    # batch statistics carry a larger O(1/m) bias and spread than the full
    # sample, so this error bar is conservative
    return est, float(np.std(parts, ddof=1) / np.sqrt(batches))


@dataclass(frozen=True)
class PermutationResult:
    statistic: float
    null_q99: float
    p_value: float
    null: np.ndarray

    @property
    def passed(self) -> bool:
        return self.statistic <= self.null_q99


def permutation_test(a, b, rng: np.random.Generator,
                     n_perm: int = N_PERMUTATIONS) -> PermutationResult:
    """Energy-distance permutation test of equal laws.

    One sweep over the pooled pairwise distances evaluates the observed
    labelling and all permuted ones at once.
    """
    a, b = _as_cloud(a), _as_cloud(b)
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    na, nb = a.shape[0], b.shape[0]
    pooled = np.concatenate([a, b])
    n = na + nb
    labels = np.zeros((n, n_perm + 1))
    labels[:na, 0] = 1.0
    for p in range(1, n_perm + 1):
        labels[rng.permutation(n)[:na], p] = 1.0

    within = np.zeros(n_perm + 1)
    rowsum = np.empty(n)
    for lo in range(0, n, _ROW_CHUNK):
        d = cdist(pooled[lo:lo + _ROW_CHUNK], pooled)
        rowsum[lo:lo + _ROW_CHUNK] = d.sum(axis=1)
        within += np.einsum("ij,ij->j", labels[lo:lo + _ROW_CHUNK], d @ labels)
    total = rowsum.sum()
    cross_a = labels.T @ rowsum
    s_aa = within
    s_ab = cross_a - within
    s_bb = total - 2.0 * cross_a + within
    stats = 2.0 * s_ab / (na * nb) - s_aa / na**2 - s_bb / nb**2
    observed, null = float(stats[0]), stats[1:]
    p_value = (1.0 + np.count_nonzero(null >= observed)) / (n_perm + 1.0)
    return PermutationResult(observed, float(np.quantile(null, 0.99)), float(p_value), null)
