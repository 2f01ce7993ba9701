"""Fixtures built to violate each statistical check.

Every function returns the CheckResult of a check run on data that breaks
the property under test; a sound check must report a failure on each.
"""
from dataclasses import replace

import numpy as np

from brownflow.coalescing import simulate_coalescing_ensemble
from brownflow.diagnostics import (
    CheckResult,
    HolderCheckSpec,
    block_monotone_check,
    gaussian_abs_moment,
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
from brownflow.experiments import _nonincreasing, clip5, clip10
from brownflow.flow import simulate_paths, simulate_wiener
from brownflow.kernel import CovarianceKernel, make_mollifier
from brownflow.measures import EmpiricalMeasure


def _bm(starts, steps=100, replicas=4000, seed=0, scale=1.0):
    """Independent BMs on [0, 1], optionally with inflated diffusion."""
    w = simulate_wiener(starts, 1.0 / steps, steps, replicas, seed)
    s = np.asarray(starts, dtype=float)
    return replace(w, paths=s + scale * (w.paths - s))


def qv_inflated():
    return qv_check(_bm([0.0], scale=1.2))


def joint_char_wrong_kernel():
    ens = simulate_paths([0.0, 0.05], 0.1, 1e-2, 100, 2000, seed=1)
    return joint_char_check(ens, CovarianceKernel(make_mollifier(), 0.5))


def marginal_shifted():
    rng = np.random.default_rng(2)
    return marginal_gaussian_check(rng.normal(0.5, 1.0, 10_000), 0.0, 1.0, name="marginal")


def holder_inflated():
    ens = _bm([0.0, 1.0], scale=2.0)
    spec = HolderCheckSpec(clip10, 1.0, 2, 0.25, 0.75)
    return holder_check(spec, ens, EmpiricalMeasure.uniform(np.array([0.0, 1.0])))


def _drifted(ens, speed):
    return replace(ens, paths=ens.paths + speed * ens.times[None, :, None])


def moment_bound_shifted():
    ens = _drifted(_bm([0.0]), 0.5)
    return moment_bound_check(ens, EmpiricalMeasure.uniform(np.array([0.0])), 2, 1.0)


def tail_heavier_than_gaussian():
    ens = _bm([0.0], scale=5.0)
    mu0 = EmpiricalMeasure.uniform(np.array([0.0]))
    return tail_condition_check(ens, mu0, 3, 1.0, 0.1, range(3, 11),
                                moment_value=gaussian_abs_moment(0.0, 1.0, 3))


def stopped_mismatched_eps():
    flow = simulate_paths([0.0, 0.4], 0.1, 1e-2, 100, 4000, seed=3)
    wiener = simulate_wiener([0.0, 0.4], 1e-2, 100, 4000, seed=3)
    return stopped_process_check(flow, wiener, 0.1, wiener_eps=0.05)


def moment_functional_shifted():
    a = _bm([0.0, 0.2], seed=4)
    b = _drifted(_bm([0.0, 0.2], seed=5), 0.3)
    mu0 = EmpiricalMeasure.uniform(np.array([0.0, 0.2]))
    return moment_functional(a, b, [0.5, 1.0], [clip5, clip5], mu0)


def merge_rate_without_bridge():
    ens = simulate_coalescing_ensemble([0.0, 1.0], 1e-2, 100, 10_000, seed=6, bridge=False)
    return merge_rate_check(ens)


def block_count_split():
    ens = simulate_coalescing_ensemble([0.0, 0.05], 1e-2, 100, 200, seed=7)
    paths = ens.paths.copy()
    paths[0, -1, 1] += 1.0  # a merged pair that splits again
    paths[0, -2, 1] = paths[0, -2, 0]
    return block_monotone_check(replace(ens, paths=paths))


def projectivity_wrong_gap():
    three = simulate_coalescing_ensemble([0.0, 0.5, 1.0], 1e-2, 100, 3000, seed=8)
    fresh = simulate_coalescing_ensemble([0.0, 0.5], 1e-2, 100, 3000, seed=9)
    return projectivity_check(three, fresh, (0, 2))


def two_sample_shifted():
    rng = np.random.default_rng(10)
    return two_sample_check(rng.normal(size=(2000, 2)), rng.normal(0.2, 1, (2000, 2)),
                            "energy", 10, 2000)


def sweep_increasing():
    ok, worst = _nonincreasing([0.01, 0.02, 0.05], [1e-3, 1e-3, 1e-3])
    return CheckResult("energy_monotone", worst, 0.0, 0.0, 0.0, ok)


FIXTURES = {
    "qv": qv_inflated,
    "joint_char": joint_char_wrong_kernel,
    "marginal": marginal_shifted,
    "holder": holder_inflated,
    "moment_bound": moment_bound_shifted,
    "tail_condition": tail_heavier_than_gaussian,
    "stopped_process": stopped_mismatched_eps,
    "moment_functional": moment_functional_shifted,
    "merge_rate": merge_rate_without_bridge,
    "block_count": block_count_split,
    "projectivity": projectivity_wrong_gap,
    "energy_two_sample": two_sample_shifted,
    "energy_monotone": sweep_increasing,
}
