import math

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from singsde.coefficients import (CertificationError, ExponentPair, Field, GridField, MollificationFamily,
                                  bessel_norm, bessel_potential, ellipticity_margin, mixed_norm, mollify,
                                  plancherel_norm, stratonovich_correction, wz_correction)
from singsde.registry import FIELDS, build_field, field_names


def gaussian_grid(L=6.0, res=256, width=1.0):
    return GridField.from_function(lambda x: np.exp(-np.sum(x * x, axis=-1) / width ** 2), L, res)


def sine_grid(k, L=math.pi, res=256):
    return GridField.from_function(lambda x: np.sin(k * x[..., 0]), L, res)


# -- norms ------------------------------------------------------------------

def test_zero_field_has_zero_norm():
    f = GridField.from_function(lambda x: np.zeros(x.shape[:-1]), 2.0, 64)
    assert mixed_norm(f, 2) == 0.0
    assert bessel_norm(f, -1.0, 3.0) == 0.0


@pytest.mark.parametrize("d,p", [(1, 2.0), (2, 3.0)])
def test_constant_mixed_norm(d, p):
    L, T, c = 1.5, 2.0, -3.0
    f = GridField.from_function(lambda x: np.full(x.shape[:-1], c), L, 32, dim=d, horizon=T)
    assert mixed_norm(f, p) == pytest.approx(abs(c) * (T * (2 * L) ** d) ** (1 / p), rel=1e-12)


def test_time_dependent_trapezoid():
    times = np.linspace(0.0, 1.0, 5)
    vals = np.stack([np.full(16, t) for t in times])
    f = GridField(1.0, 16, 1, times, vals)
    # ||t||_{L^1_t L^1_x} = 2 * int_0^1 t dt
    assert mixed_norm(f, 1.0, 1.0) == pytest.approx(1.0, rel=1e-12)


def test_gaussian_norm_against_closed_form():
    f = gaussian_grid()
    exact = (math.pi / 2) ** 0.25  # (int exp(-2 x^2) dx)^{1/2}
    assert abs(mixed_norm(f, 2) - exact) / exact < 1e-3


def test_nonfinite_samples_rejected():
    f = GridField.from_function(lambda x: np.where(x[..., 0] == 0, np.inf, 1.0), 1.0, 8)
    with pytest.raises(ValueError):
        mixed_norm(f, 2)


@pytest.mark.parametrize("k", [1, 3, 7])
@pytest.mark.parametrize("beta", [-1.0, -0.5, 0.5, 1.0])
@pytest.mark.parametrize("p", [2.0, 4.0])
def test_fourier_mode_is_eigenfunction(k, beta, p):
    f = sine_grid(k)
    ratio = bessel_norm(f, beta, p) / mixed_norm(f, p)
    assert ratio == pytest.approx((1 + k * k) ** (beta / 2), rel=1e-6)


def test_beta_zero_is_plain_norm():
    f = gaussian_grid()
    assert bessel_norm(f, 0.0, 3.0) == mixed_norm(f, 3.0)


def test_multiplier_inverse():
    f = gaussian_grid(width=0.5)
    back = bessel_potential(bessel_potential(f, -1.0), 1.0)
    assert mixed_norm(back, 2) == pytest.approx(mixed_norm(f, 2), rel=1e-6)


@pytest.mark.parametrize("beta", [-1.0, -0.3, 0.0, 0.7])
def test_plancherel_agrees(beta):
    f = gaussian_grid(L=4.0, res=128, width=0.7)
    assert bessel_norm(f, beta, 2.0) == pytest.approx(plancherel_norm(f, beta), rel=1e-10)


def test_non_power_of_two_rejected():
    with pytest.raises(ValueError):
        bessel_norm(gaussian_grid(res=100), -1.0, 2.0)


def test_periodisation_error_small():
    a = bessel_norm(GridField.from_function(lambda x: np.exp(-x[..., 0] ** 2), 8.0, 512), -1.0, 2.0)
    b = bessel_norm(GridField.from_function(lambda x: np.exp(-x[..., 0] ** 2), 16.0, 1024), -1.0, 2.0)
    assert abs(a - b) / b < 0.01


def test_grid_field_csv_round_trip(tmp_path):
    f = GridField.from_field(build_field("identity"), 1.0, 8, times=[0.0, 0.5])
    f.to_csv(tmp_path / "g.csv")
    back = GridField.read_csv(tmp_path / "g.csv")
    np.testing.assert_array_equal(back.values, f.values)
    np.testing.assert_array_equal(back.times, f.times)


# -- exponent classes ---------------------------------------------------------

def test_class_membership_examples():
    assert ExponentPair(3.0, 3.0).in_class(1, 1.0) is False  # 2/3 + 1/3 = 1 is on the boundary
    assert ExponentPair(4.0, 4.0).in_class(1, 1.0)
    assert ExponentPair(8.0, 8.0).in_class(1, 1.0)
    assert ExponentPair(2.0, math.inf).in_class(1, 0.0)
    assert ExponentPair(2.0, math.inf).satisfies_strong(1)
    assert not ExponentPair(2.0, 4.0).satisfies_strong(1)


exps = st.floats(1.01, 200.0)


@given(p=exps, q=exps, dp=st.floats(0, 100), dq=st.floats(0, 100), d=st.integers(1, 3),
       beta=st.sampled_from([0.0, 0.5, 1.0]))
def test_class_monotone_in_exponents(p, q, dp, dq, d, beta):
    assume(ExponentPair(p, q).in_class(d, beta))
    assert ExponentPair(p + dp, q + dq).in_class(d, beta)


# -- fields and mollification -------------------------------------------------

@pytest.mark.parametrize("name", field_names())
def test_registry_gradients_match_finite_differences(name):
    f = build_field(name)
    if not f.has_gradient:
        pytest.skip("no analytic gradient")
    probes = np.random.default_rng(0).uniform(-2, 2, (32, f.dim))
    f.check_gradient(probes)


def test_registry_rejects_unknown():
    with pytest.raises(KeyError):
        build_field("nope")
    with pytest.raises(KeyError):
        build_field({"name": "sine", "frequency": 2})
    assert set(field_names()) == set(FIELDS)


def test_mollifier_preserves_constants():
    fam = MollificationFamily(Field.constant([2.5], 1), eps0=0.5, cutoff0=1.0)
    m = mollify(fam, 4, strict=False)
    x = np.linspace(-(m.cutoff - m.eps) + 1e-9, m.cutoff - m.eps - 1e-9, 101)[:, None]
    np.testing.assert_allclose(m.field(0.0, x)[:, 0], 2.5, rtol=1e-12)


def test_singular_drift_lp_error_decreases():
    fam = MollificationFamily(build_field("truncated-power"), eps0=2.0, eps_power=5.0)
    members = [mollify(fam, n) for n in (4, 8, 16, 32)]
    errs = [m.lp_error for m in members]
    assert all(b < a for a, b in zip(errs, errs[1:]))
    assert all(m.certified for m in members)


def test_gradient_growth_matches_young_bound():
    fam = MollificationFamily(build_field("truncated-power"), eps0=2.0, eps_power=5.0)
    l1 = 8.0 / 3.0  # int_{-1}^{1} |x|^{-1/4} dx
    bump_mass = 32.0 / 35.0
    bump_slope = 6 / math.sqrt(5) * (4 / 5) ** 2
    x = np.linspace(-2, 2, 8001)[:, None]
    for n in (4, 16):
        m = mollify(fam, n)
        bound = l1 * bump_slope / bump_mass / m.eps ** 2
        measured = np.abs(m.field.gradient(0.0, x)).max()
        assert bound / 2 <= measured <= 2 * bound


def test_mollify_linear_and_contracting():
    f, g = build_field("truncated-power"), build_field({"name": "sine", "k": 3.0})
    fam = lambda base: MollificationFamily(base, eps0=2.0, eps_power=5.0)
    a = mollify(fam(f.scale(2.0) + g), 8, strict=False).field
    b = mollify(fam(f), 8, strict=False).field
    c = mollify(fam(g), 8, strict=False).field
    x = np.linspace(-3, 3, 257)[:, None]
    np.testing.assert_allclose(a(0.0, x), 2 * b(0.0, x) + c(0.0, x), atol=1e-12)
    grid = lambda h: GridField.from_field(h, 4.0, 4096)
    assert mixed_norm(grid(b), 2) <= mixed_norm(grid(f), 2) + 1e-3


def test_certification_failure_is_reported():
    fam = MollificationFamily(build_field("truncated-power"), rate_scale=0.01)
    with pytest.raises(CertificationError):
        mollify(fam, 4)
    assert not mollify(fam, 4, strict=False).certified


# -- correction drifts --------------------------------------------------------

def poly_sigma(seed=0):
    """2x2 matrix field with quadratic entries and exact gradient."""
    r = np.random.default_rng(seed)
    A, B, C = r.normal(size=(2, 2)), r.normal(size=(2, 2, 2)), r.normal(size=(2, 2, 2))

    def fn(t, x):
        return A + np.einsum("jkl,...l->...jk", B, x) + np.einsum("jkl,...l->...jk", C, x * x)

    def grad(t, x):
        return B + 2 * np.einsum("jkl,...l->...jkl", C, x)

    return Field("matrix", 2, fn, grad, name="poly")


def test_constant_sigma_has_no_correction():
    s = Field.constant([[1.0, 2.0], [0.5, 3.0]], 2)
    x = np.random.default_rng(1).normal(size=(10, 2))
    assert np.all(stratonovich_correction(s)(0.0, x) == 0)
    assert np.all(wz_correction(s, [[0.0, 1.0], [-1.0, 0.0]])(0.0, x) == 0)


def test_stratonovich_correction_linear_1d():
    s = Field("matrix", 1, lambda t, x: x[..., None], lambda t, x: np.ones(x.shape[:-1] + (1, 1, 1)))
    x = np.linspace(-2, 2, 9)[:, None]
    np.testing.assert_allclose(stratonovich_correction(s)(0.0, x), x / 2)


def test_stratonovich_correction_against_finite_differences():
    s = poly_sigma()
    x = np.random.default_rng(2).normal(size=(20, 2))
    h = 1e-6
    fd = np.zeros((20, 2))
    for l in range(2):
        e = np.zeros(2)
        e[l] = h
        dsig = (s(0.0, x + e) - s(0.0, x - e)) / (2 * h)  # d_l sigma_jk
        fd += 0.5 * np.einsum("nk,njk->nj", s(0.0, x)[:, l, :], dsig)
    np.testing.assert_allclose(stratonovich_correction(s)(0.0, x), fd, atol=1e-5)


def test_wz_correction_special_cases():
    s = poly_sigma(3)
    x = np.random.default_rng(4).normal(size=(15, 2))
    np.testing.assert_allclose(wz_correction(s, 0.5 * np.eye(2))(0.0, x), stratonovich_correction(s)(0.0, x),
                               rtol=1e-13, atol=1e-13)
    assert np.all(wz_correction(s, np.zeros((2, 2)))(0.0, x) == 0)
    with pytest.raises(ValueError):
        stratonovich_correction(Field("matrix", 1, lambda t, x: x[..., None]))


@given(st.lists(st.floats(-2, 2), min_size=8, max_size=8))
def test_wz_correction_additive_in_c(entries):
    c1, c2 = np.reshape(entries[:4], (2, 2)), np.reshape(entries[4:], (2, 2))
    s = poly_sigma(5)
    x = np.random.default_rng(6).normal(size=(6, 2))
    lhs = wz_correction(s, c1 + c2)(0.0, x)
    rhs = wz_correction(s, c1)(0.0, x) + wz_correction(s, c2)(0.0, x)
    np.testing.assert_allclose(lhs, rhs, atol=1e-10)


def test_ellipticity_examples():
    pts = np.random.default_rng(0).normal(size=(5, 2))
    assert tuple(ellipticity_margin(Field.identity_matrix(2), pts)) == pytest.approx((1.0, 1.0))
    low, high = ellipticity_margin(Field.constant(np.diag([2.0, 1.0]), 2), pts)
    assert (low, high) == pytest.approx((1.0, 4.0))
    assert ellipticity_margin(Field.constant(np.zeros((2, 2)), 2), pts).degenerate
