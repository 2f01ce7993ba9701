import math

import numpy as np
import pytest

from brownflow.flow import (
    FlowPath,
    FlowState,
    NoiseField,
    SimConfig,
    SimulationError,
    _sqrt_psd_increment,
    first_exit_time,
    simulate_flow,
    simulate_paths,
    simulate_wiener,
    step_covariance,
    step_field,
    stopped_values,
)
from brownflow.kernel import CovarianceKernel, make_mollifier
from brownflow.twosample import batch_mean_se

K = make_mollifier()


def _state(*x, batch=None):
    x = np.array(x, dtype=float)
    pos = x if batch is None else np.tile(x, (batch, 1))
    return FlowState(0.0, pos, x)


def test_single_particle_increment_variance():
    h = 1e-3
    ck = CovarianceKernel(K, 0.1)
    out = step_covariance(_state(0.3, batch=100_000), h, np.random.default_rng(0), ck)
    inc = out.positions[:, 0] - 0.3
    est, se = batch_mean_se(inc**2)
    assert abs(est - h) <= 3 * se
    assert out.t == h


def test_coincident_particles_move_together():
    ck = CovarianceKernel(K, 0.1)
    out = step_covariance(_state(0.5, 0.5, batch=1000), 1e-3, np.random.default_rng(1), ck)
    np.testing.assert_allclose(out.positions[:, 0], out.positions[:, 1], atol=1e-12)
    out = step_field(_state(0.5, 0.5, batch=1000), 1e-3, NoiseField(0.1), np.random.default_rng(1))
    np.testing.assert_array_equal(out.positions[:, 0], out.positions[:, 1])


@pytest.mark.parametrize("stepper", ["covariance", "field"])
def test_separated_particles_are_uncorrelated(stepper):
    rng = np.random.default_rng(2)
    s = _state(0.0, 0.5, batch=100_000)
    if stepper == "covariance":
        out = step_covariance(s, 1e-3, rng, CovarianceKernel(K, 0.1))
    else:
        out = step_field(s, 1e-3, NoiseField(0.1), rng)
    inc = out.positions - s.positions
    est, se = batch_mean_se(inc[:, 0] * inc[:, 1])
    assert abs(est) <= 3 * se


def test_field_increments_disjoint_support_exactly_independent():
    # no cell is shared when the gap exceeds 2 eps r, so each increment only
    # depends on its own block of variates
    nf = NoiseField(0.1)
    x = np.array([[0.0, 0.25]])
    a = step_field(FlowState(0.0, x, x[0]), 1e-3, nf, np.random.default_rng(5))
    z = np.random.default_rng(5).standard_normal((1, 2, nf.span))
    z[:, 1] = 0.0

    class Replay:  # same variates with the right particle's block zeroed
        def standard_normal(self, shape):
            return z

    b = step_field(FlowState(0.0, x, x[0]), 1e-3, nf, Replay())
    assert a.positions[0, 0] == b.positions[0, 0]


def test_field_single_particle_variance_matches_riemann_sum():
    nf = NoiseField(0.1)
    x = np.array([0.0123])
    first = nf.first_cell(x)
    w = nf.weights(K, x, first)
    riemann = float(np.sum(w**2) * nf.pitch)
    assert riemann == pytest.approx(1.0, rel=0.01)
    # the support is covered by the window
    q_lo = (first + 0.5) * nf.pitch
    q_hi = (first + nf.span - 0.5) * nf.pitch
    assert q_lo[0] <= x[0] - 0.1 + nf.pitch and q_hi[0] >= x[0] + 0.1 - nf.pitch


def test_field_pitch_upper_limit():
    with pytest.raises(ValueError):
        NoiseField(0.1, pitch=0.1)


def test_psd_root_closed_form_matches_eigh():
    rng = np.random.default_rng(3)
    g = rng.uniform(-1, 1, 50)
    a = np.empty((50, 2, 2))
    a[:, 0, 0] = a[:, 1, 1] = 1.0
    a[:, 0, 1] = a[:, 1, 0] = g
    xi = rng.normal(size=(50, 2))
    w, v = np.linalg.eigh(a)
    root = (v * np.sqrt(np.maximum(w, 0))[:, None, :]) @ np.swapaxes(v, 1, 2)
    np.testing.assert_allclose(_sqrt_psd_increment(a, xi), np.einsum("rij,rj->ri", root, xi),
                               atol=1e-12)


def test_indefinite_matrix_is_a_simulation_error():
    a = np.array([[1.0, 2.0, 0.0], [2.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    with pytest.raises(SimulationError):
        _sqrt_psd_increment(a, np.zeros(3))
    with pytest.raises(SimulationError):
        _sqrt_psd_increment(a[:2, :2], np.zeros(2))


@pytest.mark.parametrize("bad", [
    dict(eps=0.0), dict(h=0.0), dict(starts=(1.0, 0.0)), dict(starts=(0.0, 0.0)),
    dict(mode="euler"), dict(record_every=3), dict(starts=(0.0, math.inf)),
])
def test_config_validation(bad):
    kw = dict(eps=0.1, starts=(0.0, 1.0), steps=10)
    kw.update(bad)
    with pytest.raises(ValueError):
        SimConfig(**kw)


@pytest.mark.parametrize("mode", ["covariance", "field"])
def test_same_seed_same_paths(mode):
    cfg = SimConfig(0.1, (0.0, 0.05, 1.0), h=1e-2, steps=20, replicas=2, seed=11, mode=mode)
    a, b = simulate_flow(cfg), simulate_flow(cfg)
    assert np.array_equal(a.paths, b.paths)
    assert np.array_equal(a.crossings, b.crossings)
    c = simulate_flow(SimConfig(0.1, (0.0, 0.05, 1.0), h=1e-2, steps=20, replicas=2, seed=12,
                                mode=mode))
    assert not np.array_equal(a.paths, c.paths)


def test_replica_prefix_is_stable():
    # replica r depends only on (seed, r), not on how many replicas ran
    a = simulate_paths([0.0, 0.1], 0.1, 1e-2, 10, 3, seed=4)
    b = simulate_paths([0.0, 0.1], 0.1, 1e-2, 10, 1100, seed=4)
    assert np.array_equal(a.paths, b.paths[:3])


def test_worker_count_does_not_change_output():
    a = simulate_paths([0.0, 0.1], 0.1, 1e-2, 5, 2100, seed=4, workers=1)
    b = simulate_paths([0.0, 0.1], 0.1, 1e-2, 5, 2100, seed=4, workers=3)
    assert np.array_equal(a.paths, b.paths)


def test_record_every_subsamples_the_full_path():
    full = simulate_paths([0.0, 0.3], 0.2, 1e-2, 20, 4, seed=1)
    sub = simulate_paths([0.0, 0.3], 0.2, 1e-2, 20, 4, seed=1, record_every=5)
    assert np.array_equal(sub.paths, full.paths[:, ::5])
    assert np.allclose(sub.times, [0, 0.05, 0.1, 0.15, 0.2])
    assert np.array_equal(sub.crossings, full.crossings)


def test_tags_are_exchangeable_in_field_mode():
    # listing the starts in another order relabels the particles only
    a = simulate_paths([0.0, 0.05], 0.1, 1e-3, 50, 3, seed=2, mode="field")
    b = simulate_paths([0.05, 0.0], 0.1, 1e-3, 50, 3, seed=2, mode="field")
    np.testing.assert_allclose(a.paths, b.paths[:, :, ::-1], atol=1e-12)


def test_ensemble_accessors():
    ens = simulate_paths([0.0, 1.0], 0.1, 0.1, 10, 5, seed=0)
    assert ens.replicas == 5 and ens.n == 2 and ens.steps == 10
    assert ens.at(0.5).shape == (5, 2)
    p = ens.path(2)
    assert isinstance(p, FlowPath) and p.positions.shape == (11, 2)
    assert p.step == pytest.approx(0.1)
    with pytest.raises(ValueError):
        ens.at(0.55)


def test_field_crossings_rare_at_fine_step():
    ens = simulate_paths([0.0, 0.15, 0.3], 0.1, 1e-4, 2000, 64, seed=5, mode="field",
                         record_every=2000)
    assert ens.crossing_rate() < 1e-3


def test_first_exit_time_on_grid():
    times = np.arange(10) * 0.1
    far = FlowPath(times, np.column_stack([np.zeros(10), np.full(10, 0.5)]), "covariance")
    assert first_exit_time(far, 0.1) is None
    gap = np.full(10, 0.5)
    gap[7:] = 0.15
    near = FlowPath(times, np.column_stack([np.zeros(10), gap]), "covariance")
    assert first_exit_time(near, 0.1) == pytest.approx(0.7)


def test_pre_exit_increments_uncorrelated():
    ens = simulate_paths([0.0, 0.4], 0.1, 1e-2, 20, 20_000, seed=8)
    inc = np.diff(ens.paths, axis=1)
    gaps = np.abs(ens.paths[:, :-1, 1] - ens.paths[:, :-1, 0])
    inside = gaps > 0.2 + 1e-9
    prod = (inc[:, :, 0] * inc[:, :, 1])[inside]
    est, se = batch_mean_se(prod)
    assert abs(est) <= 3 * se


def test_stopped_values_freeze_at_exit():
    w = simulate_wiener([0.0, 0.3], 1e-2, 100, 200, seed=1)
    stopped = stopped_values(w, 0.2)
    gaps = np.abs(stopped[:, 1] - stopped[:, 0])
    moved = np.any(np.abs(np.diff(w.paths, axis=1)) > 0, axis=(1, 2))
    assert moved.all()
    hit = np.min(np.abs(w.paths[:, :, 1] - w.paths[:, :, 0]), axis=1) <= 0.2
    assert np.all(gaps[hit] <= 0.2)
    assert np.array_equal(stopped[~hit], w.paths[~hit, -1])
