import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from brownflow.measures import (
    ATOM_BUDGET,
    EmpiricalMeasure,
    TransportError,
    cost_phi_n,
    expand,
    moment,
    monotone_plan,
    optimal_plan,
    pushforward,
    tail_mass,
    wasserstein,
)


def brute_force(n, mu, nu):
    """Minimum over all bijections of the equal-weight expansions."""
    src, tgt, denom = expand(mu, nu)
    a, b = mu.atoms[src], nu.atoms[tgt]
    best = math.inf
    for perm in itertools.permutations(range(len(b))):
        best = min(best, sum(cost_phi_n(n, a[i], b[j]) for i, j in enumerate(perm)))
    return max(best / denom, 0.0) ** (1.0 / max(n, 1))


def random_measure(rng, m, d=1):
    return EmpiricalMeasure.uniform(rng.normal(0, 2, (m, d)))


def test_weights_must_sum_to_one():
    with pytest.raises(ValueError):
        EmpiricalMeasure(np.array([0.0, 1.0]), np.array([0.5, 0.6]))
    with pytest.raises(ValueError):
        EmpiricalMeasure(np.array([0.0, 1.0]), np.array([1.5, -0.5]))
    with pytest.raises(ValueError):
        EmpiricalMeasure(np.array([0.0, 1.0]), np.array([1.0]))


def test_pushforward_identity_and_translation():
    mu = EmpiricalMeasure(np.array([0.0, 1.0, 2.0]), np.array([0.2, 0.3, 0.5]))
    same = pushforward(mu, lambda x: x)
    np.testing.assert_array_equal(same.atoms, mu.atoms)
    np.testing.assert_array_equal(same.weights, mu.weights)
    shifted = pushforward(mu, mu.atoms + 1.5)
    assert shifted.integrate(lambda x: x[:, 0]) == pytest.approx(mu.integrate(lambda x: x[:, 0]) + 1.5)


def test_pushforward_merges_coalesced_atoms():
    mu = EmpiricalMeasure.uniform(np.array([0.0, 1.0, 2.0]))
    out = pushforward(mu, np.array([0.7, 0.7, 2.5]), consolidate=True)
    assert len(out) == 2
    np.testing.assert_allclose(out.weights, [2 / 3, 1 / 3])


def test_pushforward_rejects_undefined_images():
    mu = EmpiricalMeasure.uniform(np.array([0.0, 1.0]))
    with pytest.raises(ValueError):
        pushforward(mu, np.array([0.0, np.nan]))
    with pytest.raises(ValueError):
        pushforward(mu, np.array([0.0, 1.0, 2.0]))


def test_distance_between_shifted_pairs():
    mu = EmpiricalMeasure.uniform(np.array([0.0, 2.0]))
    nu = EmpiricalMeasure.uniform(np.array([1.0, 3.0]))
    assert wasserstein(1, mu, nu) == pytest.approx(1.0, abs=1e-12)
    assert wasserstein(2, mu, nu) == pytest.approx(1.0, abs=1e-12)
    assert wasserstein(0, mu, nu) == pytest.approx(0.5, abs=1e-12)


def test_bounded_cost_counterexample_for_monotone_coupling():
    # phi_0 is concave: the sorted coupling is not optimal
    mu = EmpiricalMeasure.uniform(np.array([0.0, 1.0]))
    nu = EmpiricalMeasure.uniform(np.array([1.0, 100.0]))
    exact = wasserstein(0, mu, nu)
    mono = wasserstein(0, mu, nu, method="monotone")
    assert exact == pytest.approx(0.5 * 100 / 101, abs=1e-12)
    assert mono == pytest.approx(0.5 * (0.5 + 99 / 100), abs=1e-12)
    assert exact < mono - 0.2
    assert brute_force(0, mu, nu) == pytest.approx(exact, abs=1e-12)


def test_unequal_weights_use_common_grid():
    mu = EmpiricalMeasure(np.array([0.0, 1.0]), np.array([0.25, 0.75]))
    nu = EmpiricalMeasure(np.array([0.0, 1.0]), np.array([0.5, 0.5]))
    dist, plan = wasserstein(1, mu, nu, return_plan=True)
    assert dist == pytest.approx(0.25, abs=1e-12)
    assert plan.mass.sum() == pytest.approx(1.0)
    np.testing.assert_allclose(np.bincount(plan.source, plan.mass, 2), mu.weights)
    np.testing.assert_allclose(np.bincount(plan.target, plan.mass, 2), nu.weights)


def test_budget_exceeded():
    w = np.array([1 / 9973, 1 - 1 / 9973])
    mu = EmpiricalMeasure(np.array([0.0, 1.0]), w)
    nu = EmpiricalMeasure(np.array([0.0, 1.0]), np.array([1 / 7, 6 / 7]))
    with pytest.raises(TransportError):
        wasserstein(1, mu, nu)
    assert ATOM_BUDGET == 10_000


def test_irrational_weights_rejected():
    w = np.array([1 / math.pi, 1 - 1 / math.pi])
    mu = EmpiricalMeasure(np.array([0.0, 1.0]), w)
    with pytest.raises(TransportError):
        wasserstein(1, mu, mu)


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        wasserstein(1, EmpiricalMeasure.uniform(np.zeros((2, 1))),
                    EmpiricalMeasure.uniform(np.zeros((2, 2))))


@pytest.mark.parametrize("n", [0, 1, 2, 3])
def test_solver_matches_permutation_oracle(n):
    rng = np.random.default_rng(100 + n)
    for _ in range(15):
        m, k = rng.integers(1, 7, size=2)
        d = int(rng.integers(1, 3))
        mu, nu = random_measure(rng, m, d), random_measure(rng, k, d)
        if len(expand(mu, nu)[0]) > 7:
            continue  # too many bijections to enumerate
        assert wasserstein(n, mu, nu) == pytest.approx(brute_force(n, mu, nu), abs=1e-10)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_monotone_path_is_optimal_for_convex_costs(n):
    rng = np.random.default_rng(n)
    for _ in range(30):
        m, k = rng.integers(1, 9, size=2)
        mu = EmpiricalMeasure(rng.normal(0, 3, m), rng.dirichlet(np.ones(m)))
        nu = EmpiricalMeasure(rng.normal(1, 1, k), rng.dirichlet(np.ones(k)))
        mono = monotone_plan(n, mu, nu).cost
        # exact solver on equal-weight versions is the oracle here
        mu_eq = EmpiricalMeasure.uniform(mu.atoms)
        nu_eq = EmpiricalMeasure.uniform(nu.atoms)
        assert monotone_plan(n, mu_eq, nu_eq).cost == pytest.approx(
            optimal_plan(n, mu_eq, nu_eq).cost, abs=1e-10)
        assert mono >= 0


def test_monotone_plan_marginals():
    mu = EmpiricalMeasure(np.array([3.0, 0.0, 1.0]), np.array([0.2, 0.5, 0.3]))
    nu = EmpiricalMeasure(np.array([2.0, -1.0]), np.array([0.6, 0.4]))
    plan = monotone_plan(2, mu, nu)
    np.testing.assert_allclose(np.bincount(plan.source, plan.mass, 3), mu.weights)
    np.testing.assert_allclose(np.bincount(plan.target, plan.mass, 2), nu.weights)


atoms = st.lists(st.floats(-50, 50, allow_nan=False), min_size=1, max_size=3)


@settings(max_examples=60, deadline=None)
@given(atoms, atoms, atoms, st.sampled_from([0, 1, 2, 3]))
def test_metric_axioms(a, b, c, n):
    if not (len(a) == len(b) == len(c)):
        b = (b * 3)[: len(a)]
        c = (c * 3)[: len(a)]
    mu, nu, rho = (EmpiricalMeasure.uniform(np.array(x)) for x in (a, b, c))
    d_mn, d_nr, d_mr = wasserstein(n, mu, nu), wasserstein(n, nu, rho), wasserstein(n, mu, rho)
    assert wasserstein(n, mu, mu) <= 1e-9
    assert d_mn == pytest.approx(wasserstein(n, nu, mu), abs=1e-9)
    assert d_mr <= d_mn + d_nr + 1e-9


def test_moment_and_tail_mass():
    mu = EmpiricalMeasure.uniform(np.array([1.0, 2.0, 3.0]))
    assert moment(mu, 3) == pytest.approx(12.0)
    assert moment(mu, 0) == pytest.approx((0.5 + 2 / 3 + 0.75) / 3)
    nu = EmpiricalMeasure.uniform(np.array([0.0, 3.5, -10.0]))
    assert tail_mass(nu, 3) == pytest.approx((0.5 + 1.0) / 3)
    with pytest.raises(ValueError):
        tail_mass(nu, 0)


def test_csv_round_trip():
    mu = EmpiricalMeasure(np.array([[0.1, -2.0], [3.0, 1e-17]]), np.array([0.3, 0.7]))
    text = mu.to_csv()
    assert text.splitlines()[0] == "weight,coord_1,coord_2"
    back = EmpiricalMeasure.from_csv(text)
    np.testing.assert_array_equal(back.atoms, mu.atoms)
    np.testing.assert_array_equal(back.weights, mu.weights)


def test_plan_csv_header():
    mu = EmpiricalMeasure.uniform(np.array([0.0, 2.0]))
    nu = EmpiricalMeasure.uniform(np.array([1.0, 3.0]))
    plan = optimal_plan(1, mu, nu)
    lines = plan.to_csv(lambda x, y: cost_phi_n(1, x, y), mu, nu).splitlines()
    assert lines[0] == "i,j,mass,cost"
    assert lines[1:] == ["0,0,0.5,1.0", "1,1,0.5,1.0"]
