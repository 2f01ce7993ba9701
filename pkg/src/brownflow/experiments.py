"""Experiment drivers shared by the command line and the acceptance suite."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .coalescing import simulate_coalescing_ensemble
from .diagnostics import (
    CheckResult,
    DiagnosticsReport,
    HolderCheckSpec,
    block_monotone_check,
    holder_check,
    joint_char_check,
    marginal_gaussian_check,
    merge_rate_check,
    moment_bound_check,
    moment_functional,
    projectivity_check,
    qv_check,
    stopped_process_check,
    tail_condition_check,
    two_sample_check,
)
from .flow import simulate_paths, simulate_wiener
from .kernel import CovarianceKernel, diffusion_matrix, make_mollifier, phi_eps, quad
from .measures import EmpiricalMeasure
from .twosample import energy_distance_se

CHECKS = (
    "kernel", "qv", "joint_char", "marginal", "holder", "moment_bound", "tail",
    "stopped", "moment_functional", "merge_rate", "block_count", "projectivity",
)


def clip5(x):
    return np.clip(x, -5.0, 5.0)


def clip10(x):
    return np.clip(x, -10.0, 10.0)


# Test functions of the moment functional: each entry is a list of
# (time, function) factors, evaluated as E prod_k <f_k, mu_{t_k}>.
MOMENT_FUNCTIONALS = {
    "clip5_0.5_1": ((0.5, clip5), (1.0, clip5)),
    "cos_0.5_1": ((0.5, np.cos), (1.0, np.cos)),
}


def kernel_check(eps_list=(0.05, 0.1, 0.5, 1.0), radius: float = 1.0, tol: float = 1e-8,
                 seed: int = 0) -> CheckResult:
    """Kernel identities: unit masses, g(0)=1, compact support, A=I on the gap set."""
    k = make_mollifier(1, radius)
    worst = abs(k.mass() - 1.0)
    exact_ok = True
    rng = np.random.default_rng(seed)
    for eps in eps_list:
        a = eps * radius
        worst = max(worst, abs(quad(lambda q: float(phi_eps(k, eps, q)) ** 2, -a, a) - 1.0))
        ck = CovarianceKernel(k, eps)
        worst = max(worst, abs(ck.direct(0.0) - 1.0), abs(float(ck(0.0)) - 1.0))
        far = ck.support * (1.0 + rng.exponential(1.0, 200))
        exact_ok &= bool(np.all(ck(far) == 0.0) and np.all(ck(-far) == 0.0))
        exact_ok &= ck.direct(ck.support) == 0.0
        x = np.cumsum(ck.support * (1.0 + rng.uniform(1e-6, 2.0, (50, 5))), axis=1)
        exact_ok &= bool(np.all(diffusion_matrix(ck, x) == np.eye(5)))
    return CheckResult("kernel", worst, 0.0, 0.0, tol, worst <= tol and exact_ok,
                       detail={"exact_identities": exact_ok})


@dataclass
class DiagnoseConfig:
    eps: float
    starts: tuple[float, ...]
    h: float = 1e-3
    steps: int = 1000
    replicas: int = 1000
    seed: int = 0
    mode: str = "covariance"
    weights: tuple[float, ...] | None = None
    checks: tuple[str, ...] = CHECKS
    workers: int = 1

    @property
    def mu0(self) -> EmpiricalMeasure:
        if self.weights is None:
            return EmpiricalMeasure.uniform(np.asarray(self.starts, dtype=float))
        return EmpiricalMeasure(np.asarray(self.starts, dtype=float), self.weights)


def run_diagnostics(cfg: DiagnoseConfig) -> DiagnosticsReport:
    """Simulate the ensembles the selected checks need and run them."""
    report = DiagnosticsReport()
    sel = set(cfg.checks)
    starts = np.asarray(cfg.starts, dtype=float)
    t_end = cfg.h * cfg.steps
    mu0 = cfg.mu0
    sim = dict(h=cfg.h, steps=cfg.steps, replicas=cfg.replicas, workers=cfg.workers)

    if "kernel" in sel:
        report.add(kernel_check(seed=cfg.seed))

    needs_flow = sel & {"qv", "joint_char", "marginal", "holder", "moment_bound", "tail",
                        "stopped", "moment_functional"}
    flow = simulate_paths(starts, cfg.eps, seed=cfg.seed, mode=cfg.mode, **sim) if needs_flow else None
    needs_coal = sel & {"moment_functional", "merge_rate", "block_count", "projectivity"}
    coal = (simulate_coalescing_ensemble(starts, seed=cfg.seed + 1, **sim)
            if needs_coal else None)

    if "qv" in sel:
        report.add(qv_check(flow))
    if "joint_char" in sel and starts.size >= 2:
        report.add(joint_char_check(flow, CovarianceKernel(make_mollifier(), cfg.eps)))
    if "marginal" in sel:
        for i, u in enumerate(starts):
            report.add(marginal_gaussian_check(flow.at(t_end)[:, i], u, t_end,
                                               name=f"marginal_{i}", seed=cfg.seed))
    if "holder" in sel:
        spec = HolderCheckSpec(clip10, 1.0, 2, 0.25 * t_end, 0.75 * t_end)
        report.add(holder_check(spec, flow, mu0))
    if "moment_bound" in sel:
        report.add(moment_bound_check(flow, mu0, 2, t_end))
    if "tail" in sel:
        report.add(tail_condition_check(flow, mu0, 3, t_end, 0.1, range(3, 11)))
    if "stopped" in sel and starts.size >= 2:
        wiener = simulate_wiener(starts, seed=cfg.seed, **sim)
        report.add(stopped_process_check(flow, wiener, cfg.eps))
    if "moment_functional" in sel:
        for key, factors in MOMENT_FUNCTIONALS.items():
            times = [t * t_end for t, _ in factors]
            funcs = [f for _, f in factors]
            report.add(moment_functional(flow, coal, times, funcs, mu0,
                                         name=f"moment_functional_{key}"))
    if "merge_rate" in sel and starts.size >= 2:
        report.add(merge_rate_check(coal, (0, 1)))
    if "block_count" in sel:
        report.add(block_monotone_check(coal))
    if "projectivity" in sel and starts.size >= 3:
        fresh = simulate_coalescing_ensemble(starts[[0, -1]], seed=cfg.seed + 2, **sim)
        report.add(projectivity_check(coal, fresh, (0, starts.size - 1)))
    return report


@dataclass
class SweepRow:
    eps: float
    energy: float
    energy_se: float
    moment_gaps: dict = field(default_factory=dict)
    moment_ses: dict = field(default_factory=dict)
    crossing_rate: float = 0.0


@dataclass
class SweepResult:
    rows: list[SweepRow]
    report: DiagnosticsReport

    def to_csv(self) -> str:
        keys = list(MOMENT_FUNCTIONALS)
        head = ["eps", "energy_distance", "energy_se", "crossing_rate"]
        for k in keys:
            head += [f"gap_{k}", f"gap_se_{k}"]
        lines = [",".join(head)]
        for r in self.rows:
            vals = [r.eps, r.energy, r.energy_se, r.crossing_rate]
            for k in keys:
                vals += [r.moment_gaps[k], r.moment_ses[k]]
            lines.append(",".join(repr(float(v)) for v in vals))
        return "\n".join(lines) + "\n"


def _nonincreasing(values, ses) -> tuple[bool, float]:
    worst = -math.inf
    for k in range(1, len(values)):
        slack = math.hypot(ses[k - 1], ses[k])
        worst = max(worst, values[k] - values[k - 1] - slack)
    return worst <= 0.0, worst


def convergence_sweep(eps_list, starts=(0.0, 1.0), h: float = 1e-4, steps: int = 10_000,
                      replicas: int = 10_000, seed: int = 0, workers: int = 1) -> SweepResult:
    """Flow against coalescing two-point laws over a decreasing eps list.

    All flow ensembles share one seed (common random numbers across eps);
    the coalescing reference uses an independent stream.
    """
    eps_list = [float(e) for e in eps_list]
    starts = np.asarray(starts, dtype=float)
    t_end = h * steps
    mu0 = EmpiricalMeasure.uniform(starts)
    record = steps // 2 if steps % 2 == 0 else steps
    coal = simulate_coalescing_ensemble(starts, h, steps, replicas, seed + 1,
                                        record_every=record, workers=workers)
    ref = coal.at(t_end)
    rows, last_flow = [], None
    report = DiagnosticsReport()
    gaps_final = {}
    for eps in eps_list:
        flow = simulate_paths(starts, eps, h, steps, replicas, seed, record_every=record,
                              workers=workers)
        energy, energy_se = energy_distance_se(flow.at(t_end), ref)
        row = SweepRow(eps, energy, energy_se, crossing_rate=flow.crossing_rate())
        for key, factors in MOMENT_FUNCTIONALS.items():
            res = moment_functional(flow, coal, [t * t_end for t, _ in factors],
                                    [f for _, f in factors], mu0)
            row.moment_gaps[key] = abs(res.estimate)
            row.moment_ses[key] = res.se
            gaps_final[key] = res
        rows.append(row)
        last_flow = flow

    ok, worst = _nonincreasing([r.energy for r in rows], [r.energy_se for r in rows])
    report.add(CheckResult("energy_monotone", worst, 0.0, 0.0, 0.0, ok,
                           replicas=replicas, seed=seed,
                           detail={"eps": eps_list, "energy": [r.energy for r in rows],
                                   "se": [r.energy_se for r in rows]}))
    final = two_sample_check(last_flow.at(t_end), ref, "energy_final_eps", seed, replicas)
    report.add(final)
    for key in MOMENT_FUNCTIONALS:
        ok, worst = _nonincreasing([r.moment_gaps[key] for r in rows],
                                   [r.moment_ses[key] for r in rows])
        report.add(CheckResult(f"moment_monotone_{key}", worst, 0.0, 0.0, 0.0, ok,
                               replicas=replicas, seed=seed))
        res = gaps_final[key]
        report.add(CheckResult(f"moment_functional_final_{key}", res.estimate, res.se, 0.0,
                               res.tol, res.passed, replicas=replicas, seed=seed,
                               detail=res.detail))
    return SweepResult(rows, report)
