import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dirslam.lie import (
    Pose,
    point_jacobian,
    rotation_error_deg,
    se3_exp,
    se3_log,
    so3_exp,
    so3_log,
)

vec6 = st.lists(st.floats(-2.0, 2.0), min_size=6, max_size=6).map(np.array)


def test_exp_zero_is_identity():
    T = se3_exp(np.zeros(6))
    np.testing.assert_array_equal(T.R, np.eye(3))
    np.testing.assert_array_equal(T.t, np.zeros(3))


@pytest.mark.parametrize("theta", [0.1, 1.0, np.pi / 2, 3.0])
def test_rotation_about_z(theta):
    T = se3_exp(np.array([0.0, 0.0, theta, 0.0, 0.0, 0.0]))
    np.testing.assert_allclose(T.apply(np.array([1.0, 0.0, 0.0])),
                               [np.cos(theta), np.sin(theta), 0.0], atol=1e-15)


@settings(max_examples=100, deadline=None)
@given(vec6)
def test_exp_log_roundtrip(w):
    if np.linalg.norm(w[:3]) > np.pi - 1e-3:
        w = w.copy()
        w[:3] *= (np.pi - 0.1) / np.linalg.norm(w[:3])
    T = se3_exp(w)
    np.testing.assert_allclose(se3_log(T), w, atol=1e-9)
    U = se3_exp(se3_log(T))
    np.testing.assert_allclose(U.matrix(), T.matrix(), atol=1e-12)


def test_small_angle_branch_is_continuous():
    w = np.array([1e-9, -2e-9, 3e-9, 0.1, 0.2, 0.3])
    np.testing.assert_allclose(se3_log(se3_exp(w)), w, atol=1e-15)
    np.testing.assert_allclose(so3_log(so3_exp(w[:3])), w[:3], atol=1e-18)


def test_compose_inverse():
    rng = np.random.default_rng(0)
    T = se3_exp(rng.normal(size=6))
    np.testing.assert_allclose((T @ T.inverse()).matrix(), np.eye(4), atol=1e-12)
    p = rng.normal(size=(5, 3))
    np.testing.assert_allclose(T.apply_inverse(T.apply(p)), p, atol=1e-12)


def test_quaternion_roundtrip():
    assert np.allclose(Pose.from_quaternion(np.zeros(3), [0, 0, 0, 1]).R, np.eye(3))
    T = se3_exp(np.array([0.3, -0.2, 0.5, 1.0, 2.0, 3.0]))
    q = T.quaternion()
    assert q[3] >= 0
    np.testing.assert_allclose(Pose.from_quaternion(T.t, q).R, T.R, atol=1e-14)


def test_point_jacobian_matches_finite_differences():
    rng = np.random.default_rng(3)
    T = se3_exp(rng.normal(size=6))
    x = rng.normal(size=3)
    J = point_jacobian(x, T.R)
    h = 1e-6
    num = np.zeros((3, 6))
    for k in range(6):
        d = np.zeros(6)
        d[k] = h
        num[:, k] = (T.retract(d).apply(x) - T.retract(-d).apply(x)) / (2 * h)
    np.testing.assert_allclose(J, num, atol=1e-8)


def test_rotation_error():
    R = so3_exp(np.array([0.0, 0.0, np.deg2rad(5.0)]))
    assert rotation_error_deg(np.eye(3), R) == pytest.approx(5.0, abs=1e-9)


@pytest.mark.slow
def test_orthonormal_after_million_compositions():
    rng = np.random.default_rng(0)
    steps = [se3_exp(rng.normal(scale=0.3, size=6)) for _ in range(97)]
    T = Pose.identity()
    for i in range(1_000_000):
        T = T @ steps[i % 97]
    assert np.abs(T.R.T @ T.R - np.eye(3)).max() < 1e-12
    assert np.linalg.det(T.R) == pytest.approx(1.0, abs=1e-12)
