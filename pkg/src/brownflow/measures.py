"""Finite-atom probability measures, their pushforwards and Wasserstein distances.

The cost of order ``n`` is ``phi_0(v) = |v| / (1 + |v|)`` and
``phi_n(v) = |v|^n`` for ``n >= 1``; the distance is the optimal coupling
cost raised to ``1 / max(n, 1)``.

Exact distances expand both measures onto a common equal-weight grid and
solve the resulting assignment problem. In one dimension and ``n >= 1`` the
sorted (quantile) coupling is optimal and serves as a fast path.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.optimize import linear_sum_assignment

ATOM_BUDGET = 10_000
_WEIGHT_TOL = 1e-12


class TransportError(ValueError):
    pass


@dataclass(frozen=True)
class EmpiricalMeasure:
    atoms: np.ndarray  # (m, d)
    weights: np.ndarray  # (m,)

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=float)
        if atoms.ndim == 1:
            atoms = atoms[:, None]
        weights = np.asarray(self.weights, dtype=float)
        if atoms.ndim != 2 or atoms.shape[0] < 1:
            raise ValueError("a measure needs at least one atom")
        if weights.shape != (atoms.shape[0],):
            raise ValueError("one weight per atom is required")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > _WEIGHT_TOL:
            raise ValueError("weights must be nonnegative and sum to 1")
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def uniform(cls, atoms) -> EmpiricalMeasure:
        atoms = np.asarray(atoms, dtype=float)
        m = atoms.shape[0]
        return cls(atoms, np.full(m, 1.0 / m))

    @property
    def dim(self) -> int:
        return self.atoms.shape[1]

    def __len__(self) -> int:
        return self.atoms.shape[0]

    def integrate(self, func) -> float:
        return float(np.dot(self.weights, func(self.atoms)))

    def consolidate(self) -> EmpiricalMeasure:
        """Merge bitwise-identical atoms, adding their weights."""
        uniq, inverse = np.unique(self.atoms, axis=0, return_inverse=True)
        w = np.zeros(len(uniq))
        np.add.at(w, inverse.ravel(), self.weights)
        return EmpiricalMeasure(uniq, w)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["weight"] + [f"coord_{i + 1}" for i in range(self.dim)])
        for w, a in zip(self.weights, self.atoms):
            writer.writerow([repr(float(w))] + [repr(float(v)) for v in a])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> EmpiricalMeasure:
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], [r for r in rows[1:] if r]
        if not header or header[0] != "weight" or len(header) < 2:
            raise ValueError("measure CSV needs columns weight, coord_1, ...")
        data = np.array(body, dtype=float)
        return cls(data[:, 1:], data[:, 0])


@dataclass(frozen=True)
class TransportPlan:
    source: np.ndarray
    target: np.ndarray
    mass: np.ndarray
    cost: float

    def to_csv(self, cost_fn=None, mu=None, nu=None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["i", "j", "mass", "cost"])
        for i, j, m in zip(self.source, self.target, self.mass):
            c = cost_fn(mu.atoms[i], nu.atoms[j]) if cost_fn is not None else float("nan")
            writer.writerow([int(i), int(j), repr(float(m)), repr(float(c))])
        return buf.getvalue()


def pushforward(mu0: EmpiricalMeasure, flow_map, consolidate: bool = False) -> EmpiricalMeasure:
    """Image of ``mu0`` under ``flow_map`` (atoms mapped, weights unchanged).

    ``flow_map`` is either a callable acting on the (m, d) atom array or an
    array of images, one row per atom.
    """
    if callable(flow_map):
        images = np.asarray(flow_map(mu0.atoms), dtype=float)
    else:
        images = np.asarray(flow_map, dtype=float)
    if images.ndim == 1:
        images = images[:, None]
    if images.shape != mu0.atoms.shape:
        raise ValueError(f"flow gives {images.shape} images for {mu0.atoms.shape} atoms")
    if not np.all(np.isfinite(images)):
        raise ValueError("flow is undefined at some atom")
    out = EmpiricalMeasure(images, mu0.weights)
    return out.consolidate() if consolidate else out


def phi_n(n: int, dist) -> np.ndarray:
    """Cost profile applied to distances."""
    dist = np.asarray(dist, dtype=float)
    if n == 0:
        return dist / (1.0 + dist)
    return dist ** n


def cost_phi_n(n: int, u, v) -> float:
    """``phi_n(u - v)`` for two points (scalars in one dimension)."""
    diff = np.atleast_1d(np.asarray(u, dtype=float) - np.asarray(v, dtype=float))
    return float(phi_n(n, np.linalg.norm(diff)))


def _cost_matrix(n: int, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return phi_n(n, np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1))


def _rational(weights: np.ndarray) -> list[Fraction]:
    fracs = [Fraction(float(w)).limit_denominator(ATOM_BUDGET) for w in weights]
    for w, f in zip(weights, fracs):
        if abs(float(f) - w) > _WEIGHT_TOL:
            raise TransportError(
                f"weight {w!r} is not a ratio with denominator <= {ATOM_BUDGET}; "
                "pass equal-weight atom lists instead"
            )
    return fracs


def expand(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> tuple[np.ndarray, np.ndarray, int]:
    """Source/target atom index lists of a common equal-weight expansion."""
    fmu, fnu = _rational(mu.weights), _rational(nu.weights)
    denom = 1
    for f in fmu + fnu:
        denom = denom * f.denominator // math.gcd(denom, f.denominator)
        if denom > ATOM_BUDGET:
            raise TransportError(
                f"common-denominator expansion exceeds {ATOM_BUDGET} atoms; "
                "pass equal-weight atom lists instead"
            )
    reps_mu = [int(f * denom) for f in fmu]
    reps_nu = [int(f * denom) for f in fnu]
    return (np.repeat(np.arange(len(mu)), reps_mu),
            np.repeat(np.arange(len(nu)), reps_nu), denom)


def _plan_from_pairs(src, tgt, unit: float, cost: float) -> TransportPlan:
    pairs, counts = np.unique(np.stack([src, tgt], axis=1), axis=0, return_counts=True)
    return TransportPlan(pairs[:, 0], pairs[:, 1], counts * unit, cost)


def optimal_plan(n: int, mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> TransportPlan:
    """Exact optimal coupling by assignment on the equal-weight expansion."""
    if mu.dim != nu.dim:
        raise ValueError("measures live in different dimensions")
    src, tgt, denom = expand(mu, nu)
    c = _cost_matrix(n, mu.atoms[src], nu.atoms[tgt])
    rows, cols = linear_sum_assignment(c)
    cost = float(c[rows, cols].sum()) / denom
    return _plan_from_pairs(src[rows], tgt[cols], 1.0 / denom, cost)


def monotone_plan(n: int, mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> TransportPlan:
    """Sorted (quantile) coupling of two one-dimensional measures."""
    if mu.dim != 1 or nu.dim != 1:
        raise ValueError("the monotone coupling is defined in one dimension")
    oa = np.argsort(mu.atoms[:, 0], kind="stable")
    ob = np.argsort(nu.atoms[:, 0], kind="stable")
    wa, wb = mu.weights[oa].copy(), nu.weights[ob].copy()
    i = j = 0
    src, tgt, mass = [], [], []
    # north-west corner rule on the sorted atoms
    while i < len(wa) and j < len(wb):
        m = min(wa[i], wb[j])
        if m > 0:
            src.append(oa[i])
            tgt.append(ob[j])
            mass.append(m)
        wa[i] -= m
        wb[j] -= m
        if wa[i] <= _WEIGHT_TOL:
            i += 1
        if wb[j] <= _WEIGHT_TOL:
            j += 1
    src, tgt, mass = np.array(src), np.array(tgt), np.array(mass)
    cost = float(np.dot(mass, phi_n(n, np.abs(mu.atoms[src, 0] - nu.atoms[tgt, 0]))))
    return TransportPlan(src, tgt, mass, cost)


def _from_cost(n: int, cost: float) -> float:
    return max(cost, 0.0) ** (1.0 / max(n, 1))


def wasserstein(n: int, mu: EmpiricalMeasure, nu: EmpiricalMeasure,
                method: str = "exact", return_plan: bool = False):
    """Distance of order ``n``: ``(min coupling cost) ** (1 / max(n, 1))``.

    ``method="monotone"`` uses the sorted coupling, optimal only for convex
    costs (``n >= 1``) in one dimension.
    """
    if n < 0 or int(n) != n:
        raise ValueError("order must be a nonnegative integer")
    if method == "exact":
        plan = optimal_plan(n, mu, nu)
    elif method == "monotone":
        plan = monotone_plan(n, mu, nu)
    else:
        raise ValueError(f"unknown method {method!r}")
    dist = _from_cost(n, plan.cost)
    return (dist, plan) if return_plan else dist


def moment(mu: EmpiricalMeasure, n: int) -> float:
    """``int phi_n d mu`` about the origin."""
    return float(np.dot(mu.weights, phi_n(n, np.linalg.norm(mu.atoms, axis=1))))


def tail_mass(mu: EmpiricalMeasure, k: int) -> float:
    """``<g_k, mu>`` for the ramp ``g_k(x) = min(max(|x| - k, 0), 1)``."""
    if k < 1:
        raise ValueError("k must be at least 1")
    r = np.linalg.norm(mu.atoms, axis=1)
    return float(np.dot(mu.weights, np.clip(r - k, 0.0, 1.0)))
