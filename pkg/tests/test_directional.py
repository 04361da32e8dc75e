import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from dirslam.directional import (
    VonMisesFisher,
    bingham_concentration,
    bingham_to_vmf,
    fibonacci_sphere,
    log_vmf_normalizer,
    mean_resultant_length,
    normalize,
    sample_vmf,
    sample_vmf_cosine,
    vmf_logpdf,
)

GRID = fibonacci_sphere(200_000)
CELL = 4.0 * np.pi / len(GRID)


def cosine_cdf(w, tau):
    # F(w) = (e^{tau w} - e^{-tau}) / (e^{tau} - e^{-tau}), written to avoid overflow
    w = np.asarray(w, dtype=float)
    return np.exp(tau * (w - 1.0)) * -np.expm1(-tau * (w + 1.0)) / -np.expm1(-2.0 * tau)


def test_uniform_when_tau_zero():
    x = sample_vmf(np.array([0.0, 0.0, 1.0]), 0.0, np.random.default_rng(0), size=100_000)
    assert np.linalg.norm(x.mean(axis=0)) < 0.01
    np.testing.assert_allclose(np.linalg.norm(x, axis=1), 1.0, atol=1e-12)


def test_concentrated_draws_within_18_degrees():
    mode = normalize(np.array([1.0, 2.0, -0.5]))
    x = sample_vmf(mode, 100.0, np.random.default_rng(1), size=100_000)
    ang = np.degrees(np.arccos(np.clip(x @ mode, -1, 1)))
    assert np.mean(ang <= 18.0) >= 0.99


def test_mean_resultant_length_tau_10():
    mode = np.array([0.0, 1.0, 0.0])
    x = sample_vmf(mode, 10.0, np.random.default_rng(2), size=100_000)
    expected = 1.0 / np.tanh(10.0) - 0.1
    assert abs(np.linalg.norm(x.mean(axis=0)) - expected) < 0.01
    assert mean_resultant_length(10.0) == pytest.approx(expected, abs=1e-15)


def test_logpdf_values():
    mode = np.array([0.0, 0.0, 1.0])
    assert vmf_logpdf(mode, 0.0, normalize(np.array([1.0, 1.0, 0.0]))) == pytest.approx(
        np.log(1.0 / (4.0 * np.pi)), abs=1e-12)
    assert vmf_logpdf(mode, 1.0, mode) == pytest.approx(
        np.log(1.0 / (4.0 * np.pi * np.sinh(1.0))) + 1.0, abs=1e-12)


@pytest.mark.parametrize("tau", [0.0, 0.5, 5.0, 50.0, 500.0])
def test_logpdf_integrates_to_one(tau):
    mode = normalize(np.array([0.3, -0.2, 0.9]))
    total = np.exp(vmf_logpdf(mode, tau, GRID)).sum() * CELL
    assert abs(total - 1.0) < 1e-4


def test_normalizer_continuous_at_zero_and_finite_for_huge_tau():
    assert log_vmf_normalizer(1e-7) == pytest.approx(log_vmf_normalizer(0.0), abs=1e-12)
    assert np.isfinite(log_vmf_normalizer(1e6))
    assert np.isfinite(vmf_logpdf(np.array([0, 0, 1.0]), 1e6, np.array([0, 0, 1.0])))


@pytest.mark.parametrize("tau", [1.0, 10.0, 100.0])
def test_cosine_distribution_ks(tau):
    mode = normalize(np.array([-0.4, 0.1, 0.7]))
    x = sample_vmf(mode, tau, np.random.default_rng(int(tau)), size=20_000)
    res = stats.kstest(x @ mode, lambda w: cosine_cdf(w, tau))
    assert res.pvalue > 0.01


def test_inverse_cdf_matches_closed_form():
    u = np.linspace(0.0, 1.0, 101)
    for tau in (0.3, 3.0, 30.0):
        w = sample_vmf_cosine(tau, u)
        np.testing.assert_allclose(cosine_cdf(w, tau), u, atol=1e-10)


def test_scalar_and_batch_paths_agree():
    mode = normalize(np.array([0.2, -0.9, 0.3]))
    a = sample_vmf(mode, 7.0, np.random.default_rng(5))
    b = sample_vmf(mode[None], np.array([7.0]), np.random.default_rng(5))[0]
    np.testing.assert_allclose(a, b, atol=1e-15)


def test_vmf_rejects_negative_concentration():
    with pytest.raises(ValueError):
        VonMisesFisher(np.array([0, 0, 1.0]), -1.0)


def test_bingham_zero_matrix_is_uniform():
    assert bingham_to_vmf(np.zeros((3, 3))).tau == 0.0


def test_bingham_isotropic_profile():
    e = 7.5
    v = bingham_to_vmf(np.diag([0.0, e, e]))
    np.testing.assert_allclose(np.abs(v.mode), [1.0, 0.0, 0.0], atol=1e-12)
    assert v.tau == pytest.approx(e, rel=1e-12)


def test_bingham_concentration_harmonic_and_literal():
    assert bingham_concentration(5.0, 20.0) == pytest.approx(8.0)
    assert bingham_concentration(5.0, 20.0, literal=True) == pytest.approx(2.0)


def _bingham_tv(S):
    """TV distance between the Bingham and its vMF stand-in on one hemisphere.

    The Bingham is antipodally symmetric, so both are restricted to the
    hemisphere around the vMF mode and renormalised there.
    """
    v = bingham_to_vmf(S)
    up = GRID @ v.mode >= 0
    x = GRID[up]
    b = np.exp(-0.5 * np.einsum("ni,ij,nj->n", x, S, x))
    q = np.exp(v.tau * (x @ v.mode - 1.0))
    return 0.5 * np.abs(b / b.sum() - q / q.sum()).sum()


def test_bingham_tv_isotropic_profile_small():
    assert _bingham_tv(np.diag([0.0, 10.0, 10.0])) < 0.15


def test_bingham_tv_anisotropic_profile():
    assert _bingham_tv(np.diag([0.0, 5.0, 20.0])) < 0.15


rot = st.lists(st.floats(-3.0, 3.0), min_size=3, max_size=3)


@settings(max_examples=50, deadline=None)
@given(rot, st.floats(0.0, 50.0), st.floats(0.0, 50.0), st.floats(0.01, 100.0))
def test_bingham_scaling(phi, e2, e3, c):
    from dirslam.lie import so3_exp

    R = so3_exp(np.array(phi))
    S = R @ np.diag([0.0, e2, e3]) @ R.T
    a = bingham_to_vmf(S)
    b = bingham_to_vmf(c * S)
    assert b.tau == pytest.approx(c * a.tau, rel=1e-6, abs=1e-9)
    if min(e2, e3) > 1e-3:
        assert abs(abs(a.mode @ b.mode) - 1.0) < 1e-6


@settings(max_examples=50, deadline=None)
@given(rot, st.floats(0.0, 1e4), st.integers(0, 2**31 - 1))
def test_samples_are_unit(mode, tau, seed):
    m = np.array(mode)
    if np.linalg.norm(m) < 1e-3:
        m = np.array([0.0, 0.0, 1.0])
    x = sample_vmf(m, tau, np.random.default_rng(seed), size=16)
    np.testing.assert_allclose(np.linalg.norm(x, axis=1), 1.0, atol=1e-12)
