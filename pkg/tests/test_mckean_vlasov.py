import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from singsde.coefficients import Field
from singsde.mckean_vlasov import (EmpiricalMeasure, MkvProblem, NonContractionError, chaos_report,
                                   convolution_ratio, convolve_measure, fixed_point_solve, iterate_distance,
                                   ou_variance, particle_system_solve, wasserstein, wasserstein_brute_force)
from singsde.noise import RngStream, TimeGrid, sample_brownian
from singsde.sde import SdeProblem, euler_maruyama

from conftest import gbm_fields

atoms = st.integers(1, 6).flatmap(
    lambda n: st.integers(1, 3).flatmap(
        lambda d: st.tuples(*[st.lists(st.floats(-5, 5), min_size=n * d, max_size=n * d).map(
            lambda v, n=n, d=d: np.reshape(v, (n, d))) for _ in range(3)])))


def test_diracs_are_their_distance():
    a = EmpiricalMeasure(np.full((4, 2), [1.0, 2.0]))
    b = EmpiricalMeasure(np.full((4, 2), [4.0, 6.0]))
    for m in (1, 2, 3):
        assert wasserstein(a, b, m, "exact-assignment") == pytest.approx(5.0, abs=1e-12)


def test_self_distance_zero(rng):
    mu = EmpiricalMeasure(rng.normal((7, 2)))
    assert wasserstein(mu, mu, 2, "exact-assignment") == 0.0
    assert wasserstein(mu, mu.permuted(np.arange(7)[::-1]), 1, "exact-assignment") == 0.0


def test_assignment_matches_brute_force(rng):
    a, b = EmpiricalMeasure(rng.child(1).normal((5, 2))), EmpiricalMeasure(rng.child(2).normal((5, 2)))
    for m in (1, 2):
        assert wasserstein(a, b, m, "exact-assignment") == pytest.approx(wasserstein_brute_force(a, b, m), abs=1e-12)


def test_quantile_pairing_unequal_sizes():
    a = EmpiricalMeasure(np.array([0.0, 1.0]))
    b = EmpiricalMeasure(np.array([0.0, 0.5, 1.0]))
    # mass 1/6 moves 0.5 twice
    assert wasserstein(a, b, 1) == pytest.approx(1.0 / 6.0, abs=1e-14)
    assert wasserstein(a, EmpiricalMeasure(np.array([0.0, 0.0, 1.0, 1.0])), 1) == pytest.approx(0.0, abs=1e-15)


def test_path_ground_cost_is_sup_norm():
    grid = TimeGrid(1.0, 2)
    a = EmpiricalMeasure(np.array([[[0.0], [3.0], [0.0]]]), grid)
    b = EmpiricalMeasure(np.zeros((1, 3, 1)), grid)
    assert wasserstein(a, b, 1, "exact-assignment") == 3.0
    assert wasserstein(a.stopped(0), b.stopped(0), 1, "exact-assignment") == 0.0


@given(atoms)
def test_metric_axioms(triple):
    x, y, z = (EmpiricalMeasure(v) for v in triple)
    for m in (1, 2):
        xy = wasserstein(x, y, m, "exact-assignment")
        assert xy == pytest.approx(wasserstein(y, x, m, "exact-assignment"), abs=1e-12)
        assert xy <= wasserstein(x, z, m, "exact-assignment") + wasserstein(z, y, m, "exact-assignment") + 1e-9
        assert xy == pytest.approx(wasserstein_brute_force(x, y, m), abs=1e-12)
    assert wasserstein(x, y, 1, "exact-assignment") <= wasserstein(x, y, 2, "exact-assignment") + 1e-12


def test_sliced_rejects_nothing_but_is_approximate(rng):
    a = EmpiricalMeasure(rng.child(1).normal((200, 3)))
    b = EmpiricalMeasure(rng.child(2).normal((200, 3)) + 1.0)
    sliced = wasserstein(a, b, 1, "sliced")
    assert 0 < sliced < np.sqrt(3) + 0.3
    with pytest.raises(ValueError):
        wasserstein(a, b, 1, "exact-assignment")


def test_convolution_identities():
    f = Field("vector", 1, lambda t, x: np.sin(x))
    np.testing.assert_allclose(convolve_measure(f, EmpiricalMeasure(np.zeros((3, 1))))(0.0, np.ones((2, 1))),
                               np.sin(np.ones((2, 1))))
    lin = Field("vector", 1, lambda t, x: 2.0 * x)
    mu = EmpiricalMeasure(np.array([[1.0], [3.0]]))
    np.testing.assert_allclose(convolve_measure(lin, mu)(0.0, np.array([[5.0]])), [[6.0]])


def test_convolution_ratio_bounded(rng):
    f = Field("scalar", 1, lambda t, x: np.exp(-x[..., 0] ** 2 * 4))
    ratios = [convolution_ratio(f, EmpiricalMeasure(rng.child(i).normal((20, 1)) * 0.3),
                                EmpiricalMeasure(rng.child(100 + i).normal((20, 1)) * 0.3), resolution=512)
              for i in range(6)]
    assert max(ratios) < 2.0 * np.median(ratios)
    mu = EmpiricalMeasure(np.zeros((2, 1)))
    assert convolution_ratio(f, mu, mu, resolution=256) == 0.0


def _free_problem():
    b, s = gbm_fields(-0.3, 0.4)
    return MkvProblem.measure_free_problem(b, s, lambda rng, n: 1.0 + 0.1 * rng.normal((n, 1)))


def test_measure_free_single_iteration(rng):
    prob, grid = _free_problem(), TimeGrid(1.0, 32)
    res = fixed_point_solve(prob, 64, grid, 1.0, 1e-12, 10, rng)
    assert res.converged and res.iterations == 2 and res.history[1] == 0.0
    ps = particle_system_solve(prob, 64, grid, rng)
    np.testing.assert_array_equal(ps.atoms, res.bundle.atoms)
    x0 = prob.initial(rng.for_purpose("initial"), 64)
    W = sample_brownian(grid, 1, rng.for_purpose("noise"), 64)
    b, s = gbm_fields(-0.3, 0.4)
    np.testing.assert_array_equal(euler_maruyama(SdeProblem(b, s, x0), W).states, ps.atoms)


def test_exchangeable(rng):
    prob, grid = MkvProblem.mean_field_ou(1.0, 0.5), TimeGrid(1.0, 16)
    x0 = prob.initial(rng.for_purpose("initial"), 32)
    W = sample_brownian(grid, 1, rng.for_purpose("noise"), 32)
    order = np.random.default_rng(3).permutation(32)
    W_perm = type(W)(grid, W.values[order])
    base = particle_system_solve(prob, 32, grid, rng, x0, W)
    perm = particle_system_solve(prob, 32, grid, rng, x0[order], W_perm)
    np.testing.assert_allclose(perm.atoms, base.atoms[order], atol=1e-12)


def test_mean_field_ou_moments(rng):
    prob, grid = MkvProblem.mean_field_ou(1.0, 0.5), TimeGrid(1.0, 64)
    res = fixed_point_solve(prob, 4000, grid, 2.0, 1e-10, 50, rng)
    X = res.bundle.atoms[:, -1, 0]
    assert abs(X.mean() - 1.0) < 4 * X.std() / np.sqrt(4000)
    assert X.var() == pytest.approx(ou_variance(1.0, 0.25), rel=0.1)


def test_convolutional_builder_checks_pi():
    b = Field.zero("vector", 1)
    sigma = Field.constant(2.0 * np.eye(1), 1)
    big = Field.constant(np.eye(1), 1)
    with pytest.raises(ValueError):
        MkvProblem.convolutional(b, sigma, lambda rng, n: np.zeros((n, 1)), pi=big)
    ok = Field.constant(0.4 * np.eye(1), 1)
    MkvProblem.convolutional(b, sigma, lambda rng, n: np.zeros((n, 1)), pi=ok)


def test_non_contraction_detected(rng):
    # drift pushes each particle away from the empirical mean with a huge gain
    b = Field("vector", 1, lambda t, x: 40.0 * x)
    prob = MkvProblem.statistic(b, Field.identity_matrix(1), lambda rng, n: rng.normal((n, 1)))
    with pytest.raises(NonContractionError) as err:
        fixed_point_solve(prob, 64, TimeGrid(1.0, 32), 1e-3, 0.0, 40, rng)
    h = err.value.history
    assert h[-1] > h[-2] > h[-3] > h[-4]


def test_iterate_distance_zero_lambda():
    grid = TimeGrid(1.0, 4)
    Y = np.zeros((2, 5, 1))
    Z = Y.copy()
    Z[0, 2, 0] = 3.0
    Z[1, 4, 0] = -1.0
    assert iterate_distance(Y, Z, grid, 0.0, 1).value == pytest.approx(2.0)
    assert iterate_distance(Y, Z, grid, 0.0, 2).value == pytest.approx(np.sqrt(5.0))
    assert iterate_distance(Y, Z, grid, 1.0, 1).value < 2.0


def test_chaos_report_self_is_zero(rng, tmp_path):
    prob, grid = MkvProblem.mean_field_ou(), TimeGrid(1.0, 8)
    ref = particle_system_solve(prob, 128, grid, rng)
    rep = chaos_report({128: ref}, ref, [0.5, 1.0])
    assert all(r["w1"] == 0.0 for r in rep.rows)
    ref.to_csv(tmp_path / "bundle.csv")
    lines = (tmp_path / "bundle.csv").read_text().splitlines()
    assert lines[0] == "particle,t,x_1" and len(lines) == 1 + 128 * 9
