"""Statistical checks of the flow and of its coalescing limit.

Every check returns a :class:`CheckResult`; a :class:`DiagnosticsReport`
collects them in insertion order and renders JSON or text. Monte Carlo
standard errors come from 20 contiguous replica batches, and two-sample
comparisons use the energy-distance permutation test.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .kernel import CovarianceKernel, quad
from .measures import EmpiricalMeasure, moment
from .replicas import check_rng
from .twosample import batch_mean_se, permutation_test

REPORT_KEYS = ("estimate", "se", "target_or_bound", "tol", "pass", "replicas", "seed")


@dataclass(frozen=True)
class CheckResult:
    name: str
    estimate: float
    se: float
    target_or_bound: float
    tol: float
    passed: bool
    replicas: int = 0
    seed: int | None = None
    detail: dict = field(default_factory=dict, compare=False)

    def as_dict(self) -> dict:
        out = {
            "estimate": _num(self.estimate),
            "se": _num(self.se),
            "target_or_bound": _num(self.target_or_bound),
            "tol": _num(self.tol),
            "pass": bool(self.passed),
            "replicas": int(self.replicas),
            "seed": self.seed,
        }
        if self.detail:
            out["detail"] = _jsonable(self.detail)
        return out


def _num(x):
    x = float(x)
    return x if math.isfinite(x) else None


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _num(obj)
    return obj


class DiagnosticsReport:
    def __init__(self, checks: Sequence[CheckResult] = ()):
        self.checks: dict[str, CheckResult] = {}
        for c in checks:
            self.add(c)

    def add(self, check: CheckResult) -> CheckResult:
        if check.name in self.checks:
            raise ValueError(f"duplicate check name {check.name!r}")
        self.checks[check.name] = check
        return check

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks.values())

    def to_json(self) -> str:
        payload = {name: c.as_dict() for name, c in self.checks.items()}
        return json.dumps(payload, indent=2) + "\n"

    def to_text(self) -> str:
        lines = []
        for name, c in self.checks.items():
            flag = "PASS" if c.passed else "FAIL"
            lines.append(f"{flag}  {name}: estimate={c.estimate:.6g} se={c.se:.3g} "
                         f"target/bound={c.target_or_bound:.6g} tol={c.tol:.3g}")
        return "\n".join(lines) + "\n"


def _info(ens) -> dict:
    return {"replicas": int(ens.paths.shape[0]), "seed": getattr(ens, "seed", None)}


def _index(times: np.ndarray, t: float) -> int:
    i = int(np.argmin(np.abs(times - t)))
    if abs(times[i] - t) > 1e-9 * max(1.0, abs(t)):
        raise ValueError(f"time {t} is not on the recorded grid")
    return i


# -- brackets ---------------------------------------------------------------

def realized_qv(paths: np.ndarray, upto: int | None = None) -> np.ndarray:
    """Sum of squared increments per replica and coordinate, (R, n)."""
    inc = np.diff(paths[:, : (None if upto is None else upto + 1)], axis=1)
    return np.einsum("rmi,rmi->ri", inc, inc)


def qv_check(ens, t: float | None = None, name: str = "qv", rel_tol: float = 0.05) -> CheckResult:
    """Realized quadratic variation of each coordinate against ``t``."""
    times = ens.times
    t = float(times[-1]) if t is None else t
    i = _index(times, t)
    qv = realized_qv(ens.paths, i)
    worst = None
    for c in range(qv.shape[1]):
        est, se = batch_mean_se(qv[:, c])
        tol = max(rel_tol * t, 3.0 * se)
        dev = abs(est - t)
        if worst is None or dev - tol > worst[0]:
            worst = (dev - tol, est, se, tol)
    _, est, se, tol = worst
    return CheckResult(name, est, se, t, tol, abs(est - t) <= tol, **_info(ens))


def joint_char_check(ens, ck: CovarianceKernel, tags=(0, 1), name: str = "joint_char") -> CheckResult:
    """Realized bracket ``sum dx_i dx_j`` against ``sum g_eps(x_i - x_j) h`` along each path."""
    i, j = tags
    x = ens.paths
    h = float(ens.times[1] - ens.times[0])
    inc = np.diff(x, axis=1)
    realized = np.sum(inc[:, :, i] * inc[:, :, j], axis=1)
    predicted = h * np.sum(ck(x[:, :-1, i] - x[:, :-1, j]), axis=1)
    diff_mean, se = batch_mean_se(realized - predicted)
    est, _ = batch_mean_se(realized)
    target = float(predicted.mean())
    return CheckResult(name, est, se, target, 3.0 * se, abs(diff_mean) <= 3.0 * se,
                       detail={"mean_difference": diff_mean}, **_info(ens))


# -- marginals --------------------------------------------------------------

def marginal_gaussian_check(samples, u: float, t: float, name: str = "marginal",
                            level: float = 0.01, seed: int | None = None) -> CheckResult:
    """KS test of samples against N(u, t) plus the first four central moments."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 1000:
        raise ValueError("need at least 1000 samples")
    ks = stats.kstest(x, "norm", args=(u, math.sqrt(t)))
    z = x - u
    exact = (0.0, t, 0.0, 3.0 * t * t)
    moments = {}
    ok = ks.pvalue >= level
    for p, target in enumerate(exact, start=1):
        est, se = batch_mean_se(z**p)
        good = abs(est - target) <= 3.0 * se
        moments[f"m{p}"] = {"estimate": est, "se": se, "target": target, "pass": good}
        ok &= good
    return CheckResult(name, ks.pvalue, 0.0, level, 0.0, bool(ok), replicas=x.size, seed=seed,
                       detail={"ks_statistic": ks.statistic, "moments": moments})


# -- moment and modulus estimates -------------------------------------------

@dataclass(frozen=True)
class HolderCheckSpec:
    """Test function ``func`` with Lipschitz constant ``lipschitz``.

    The constant is verified on 10^4 random pairs when the object is built.
    """

    func: Callable[[np.ndarray], np.ndarray]
    lipschitz: float
    exponent: int = 2
    t1: float = 0.25
    t2: float = 0.75
    k_n: float = 1.0

    def __post_init__(self):
        if self.exponent % 2:
            raise ValueError("the exponent must be even")
        rng = np.random.default_rng(20240101)
        a = rng.uniform(-20, 20, 10_000)
        b = a + rng.normal(0, 1, 10_000) * rng.choice([1e-3, 1.0, 10.0], 10_000)
        lhs = np.abs(self.func(a) - self.func(b))
        if np.any(lhs > self.lipschitz * np.abs(a - b) * (1 + 1e-9) + 1e-12):
            raise ValueError("test function violates its declared Lipschitz constant")


def pairing(mu0: EmpiricalMeasure, ens) -> np.ndarray:
    """Weights of ``mu0`` aligned with the ensemble's tags (atoms == starts)."""
    atoms = mu0.atoms[:, 0]
    if atoms.shape != ens.starts.shape or np.any(atoms != ens.starts):
        raise ValueError("mu0 atoms must coincide with the simulated start points")
    return mu0.weights


def integrate_against(ens, weights: np.ndarray, func, t: float) -> np.ndarray:
    """Per replica ``<func, mu_t>`` for ``mu_t`` the pushforward of the atoms."""
    x = ens.paths[:, _index(ens.times, t), :]
    return func(x) @ weights


def holder_check(spec: HolderCheckSpec, ens, mu0: EmpiricalMeasure,
                 name: str = "holder") -> CheckResult:
    """``E|<h, mu_t1> - <h, mu_t2>|^2`` against ``C^2 K_2 |t2 - t1|``."""
    w = pairing(mu0, ens)
    d = (integrate_against(ens, w, spec.func, spec.t1)
         - integrate_against(ens, w, spec.func, spec.t2))
    est, se = batch_mean_se(np.abs(d) ** spec.exponent)
    bound = spec.lipschitz ** spec.exponent * spec.k_n * abs(spec.t2 - spec.t1) ** (spec.exponent / 2)
    slack = 3.0 * se / est if est > 0 else 0.0
    return CheckResult(name, est, se, bound, bound * slack, est <= bound * (1.0 + slack),
                       detail={"t1": spec.t1, "t2": spec.t2}, **_info(ens))


def gaussian_abs_moment(u: float, t: float, n: int) -> float:
    """``E|u + sqrt(t) Z|^n`` by adaptive quadrature against the normal density."""
    if t == 0:
        return abs(u) ** n
    s = math.sqrt(t)

    def f(z):
        return abs(u + s * z) ** n * math.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)

    kink = -u / s
    lo, hi = kink - 40.0, kink + 40.0
    return quad(f, lo, kink, rtol=1e-10, atol=1e-14) + quad(f, kink, hi, rtol=1e-10, atol=1e-14)


def moment_bound_constant(n: int, t: float) -> float:
    """Explicit ``D`` with ``E|u + sqrt(t) Z|^n <= D (|u|^n + 1)``."""
    return 2.0 ** (n - 1) * max(1.0, gaussian_abs_moment(0.0, 1.0, n) * t ** (n / 2))


def moment_bound_check(ens, mu0: EmpiricalMeasure, n: int, t: float,
                       name: str = "moment_bound") -> CheckResult:
    """Exact-law and bound assertions for ``E int |u|^n mu_t(du)``."""
    if n < 1:
        raise ValueError("n must be at least 1")
    w = pairing(mu0, ens)
    vals = integrate_against(ens, w, lambda x: np.abs(x) ** n, t)
    est, se = batch_mean_se(vals)
    exact = float(sum(wi * gaussian_abs_moment(ui, t, n) for wi, ui in zip(w, ens.starts)))
    d = moment_bound_constant(n, t)
    bound = d * (moment(mu0, n) + 1.0)
    law_ok = abs(est - exact) <= 3.0 * se + 1e-12 * max(1.0, exact)
    bound_ok = est <= bound
    return CheckResult(name, est, se, exact, 3.0 * se, law_ok and bound_ok,
                       detail={"law_pass": law_ok, "bound": bound, "D": d, "bound_pass": bound_ok},
                       **_info(ens))


def tail_condition_check(ens, mu0: EmpiricalMeasure, n: int, t: float, delta: float,
                         ks: Sequence[int], name: str = "tail_condition",
                         moment_value: float | None = None) -> CheckResult:
    """Chebyshev chain ``P{<g_k, mu_t> > delta} <= k^-n E int |u|^n mu_t / delta`` for each k.

    By default the moment is estimated from the same replicas, in which case
    the chain holds for the empirical law by Markov's inequality. Passing
    ``moment_value`` (for instance the exact Gaussian value) decouples the
    bound from the sample.
    """
    if n <= 2:
        raise ValueError("the tail estimate needs n > 2")
    w = pairing(mu0, ens)
    x = ens.paths[:, _index(ens.times, t), :]
    if moment_value is None:
        mom, mom_se = batch_mean_se(np.abs(x) ** n @ w)
    else:
        mom, mom_se = float(moment_value), 0.0
    rows = {}
    worst = None
    ok = True
    for k in ks:
        g = np.clip(np.abs(x) - k, 0.0, 1.0) @ w
        p, p_se = batch_mean_se((g > delta).astype(float))
        scale = 1.0 / (delta * k**n)
        bound = scale * mom
        tol = 3.0 * math.hypot(p_se, scale * mom_se)
        good = p <= bound + tol
        ok &= good
        rows[str(k)] = {"probability": p, "bound": bound, "tol": tol, "pass": good}
        margin = p - bound - tol
        if worst is None or margin > worst[0]:
            worst = (margin, p, p_se, bound, tol)
    _, p, p_se, bound, tol = worst
    return CheckResult(name, p, p_se, bound, tol, bool(ok), detail=rows, **_info(ens))


# -- limit-law comparisons -------------------------------------------------

def two_sample_check(a, b, name: str, seed: int, replicas: int) -> CheckResult:
    res = permutation_test(a, b, check_rng(seed, name))
    return CheckResult(name, res.statistic, float(np.std(res.null, ddof=1)), res.null_q99, 0.0,
                       res.passed, replicas=replicas, seed=seed,
                       detail={"p_value": res.p_value})


def stopped_process_check(flow_ens, wiener_ens, eps: float, radius: float = 1.0,
                          wiener_eps: float | None = None, name: str = "stopped_process") -> CheckResult:
    """Law of the flow stopped on leaving the gap set against stopped independent BMs."""
    from .flow import stopped_values

    a = stopped_values(flow_ens, 2.0 * eps * radius)
    b = stopped_values(wiener_ens, 2.0 * (eps if wiener_eps is None else wiener_eps) * radius)
    return two_sample_check(a, b, name, flow_ens.seed, flow_ens.replicas)


def moment_functional_values(ens, weights, times, funcs) -> np.ndarray:
    """Per replica ``prod_k <f_k, mu_{t_k}>``."""
    out = np.ones(ens.paths.shape[0])
    for t, f in zip(times, funcs):
        out *= integrate_against(ens, weights, f, t)
    return out


def moment_functional(ens_a, ens_b, times, funcs, mu0: EmpiricalMeasure,
                      name: str = "moment_functional") -> CheckResult:
    """``E prod_k int f_k d mu_{t_k}`` on two ensembles and their gap."""
    va = moment_functional_values(ens_a, pairing(mu0, ens_a), times, funcs)
    vb = moment_functional_values(ens_b, pairing(mu0, ens_b), times, funcs)
    ea, sa = batch_mean_se(va)
    eb, sb = batch_mean_se(vb)
    joint = math.hypot(sa, sb)
    gap = ea - eb
    return CheckResult(name, gap, joint, 0.0, 3.0 * joint, abs(gap) <= 3.0 * joint + 1e-12,
                       detail={"a": ea, "a_se": sa, "b": eb, "b_se": sb}, **_info(ens_a))


def merge_probability(gap: float, t: float) -> float:
    """Probability that independent BMs at distance ``gap`` meet by time ``t``."""
    return 2.0 * stats.norm.sf(gap / math.sqrt(2.0 * t))


def merge_rate_check(ens, tags=(0, 1), name: str = "merge_rate") -> CheckResult:
    i, j = tags
    steps = int(round(ens.times[-1] / ens.h))
    merged = ens.merged_by(i, j, steps).astype(float)
    est, se = batch_mean_se(merged)
    target = merge_probability(ens.starts[j] - ens.starts[i], float(ens.times[-1]))
    return CheckResult(name, est, se, target, 3.0 * se, abs(est - target) <= 3.0 * se,
                       **_info(ens))


def block_monotone_check(ens, name: str = "block_count") -> CheckResult:
    """Distinct positions per recorded time never increase, in every replica."""
    xs = np.sort(ens.paths, axis=2)
    distinct = 1 + np.count_nonzero(np.diff(xs, axis=2) != 0, axis=2)
    ok = np.all(np.diff(distinct, axis=1) <= 0, axis=1)
    frac = float(ok.mean())
    return CheckResult(name, frac, 0.0, 1.0, 0.0, frac == 1.0, **_info(ens))


def projectivity_check(ens_n, ens_2, tags, t: float | None = None,
                       name: str = "projectivity") -> CheckResult:
    """Tags ``(i, j)`` of an n-particle run against a fresh two-particle run."""
    t = float(ens_n.times[-1]) if t is None else t
    a = ens_n.at(t)[:, list(tags)]
    b = ens_2.at(t)
    return two_sample_check(a, b, name, ens_n.seed, ens_n.replicas)
